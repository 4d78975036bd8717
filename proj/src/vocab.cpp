#include "aex/vocab.hpp"

#include <algorithm>
#include <sstream>

namespace aex {

int Vocabulary::id_of(const std::string& word) const {
    for (size_t i = 0; i < tokens.size(); ++i)
        if (tokens[i] == word) return static_cast<int>(i);
    return -1;
}

bool Vocabulary::is_subject(int id) const {
    return std::find(subject_tokens.begin(), subject_tokens.end(), id) !=
           subject_tokens.end();
}

bool Vocabulary::is_attribute(int id) const {
    return std::find(attribute_tokens.begin(), attribute_tokens.end(), id) !=
           attribute_tokens.end();
}

uint64_t Vocabulary::hash() const {
    std::string joined;
    for (const auto& t : tokens) {
        joined += t;
        joined += '\n';
    }
    return fnv1a(joined);
}

Vocabulary Vocabulary::toy_world() {
    Vocabulary v;
    v.tokens = {"<sot>", "<eot>", "<null>", "a", "and"};
    const std::vector<std::string> shapes = {"circle", "square",  "triangle",
                                             "diamond", "cross",  "ring",
                                             "brick",   "pillar"};
    const std::vector<std::string> colors = {"red",    "orange", "yellow",
                                             "green",  "blue",   "purple",
                                             "pink",   "white"};
    for (const auto& s : shapes) {
        v.subject_tokens.push_back(static_cast<int>(v.tokens.size()));
        v.tokens.push_back(s);
    }
    for (const auto& c : colors) {
        v.attribute_tokens.push_back(static_cast<int>(v.tokens.size()));
        v.tokens.push_back(c);
    }
    return v;
}

TokenPrompt encode_prompt(const Vocabulary& vocab, const std::string& text) {
    TokenPrompt p;
    p.text = text;
    p.ids.push_back(Vocabulary::kSot);
    std::istringstream iss(text);
    std::string word;
    while (iss >> word) {
        std::transform(word.begin(), word.end(), word.begin(), ::tolower);
        int id = vocab.id_of(word);
        if (id < 0)
            throw std::invalid_argument("unknown token: '" + word + "'");
        if (vocab.is_subject(id))
            p.subject_indices.push_back(static_cast<int>(p.ids.size()));
        p.ids.push_back(id);
    }
    p.ids.push_back(Vocabulary::kEot);
    return p;
}

TokenPrompt null_prompt(const Vocabulary& vocab) {
    (void)vocab;
    TokenPrompt p;
    p.text = "<null>";
    p.ids = {Vocabulary::kSot, Vocabulary::kNull, Vocabulary::kEot};
    return p;
}

}  // namespace aex
