#pragma once

#include <map>
#include <string>
#include <vector>

#include "aex/common.hpp"

namespace aex {

/// Token vocabulary for the toy world. Id 0 is the start-of-text marker,
/// prepended to every encoded prompt; id 1 is end-of-text; id 2 is the
/// unconditional/null token used for classifier-free guidance.
struct Vocabulary {
    std::vector<std::string> tokens;
    std::vector<int> subject_tokens;    // shape words
    std::vector<int> attribute_tokens;  // color words

    static constexpr int kSot = 0;
    static constexpr int kEot = 1;
    static constexpr int kNull = 2;

    int size() const { return static_cast<int>(tokens.size()); }
    int id_of(const std::string& word) const;
    bool is_subject(int id) const;
    bool is_attribute(int id) const;
    uint64_t hash() const;

    /// The default world vocabulary: 8 shape classes, 8 colors, fillers.
    static Vocabulary toy_world();
};

/// Encoded prompt: [sot, words..., eot] plus the indices (positions within
/// ids) of the subject tokens.
struct TokenPrompt {
    std::vector<int> ids;
    std::vector<int> subject_indices;
    std::string text;

    int length() const { return static_cast<int>(ids.size()); }
};

/// Tokenizes on whitespace; throws std::invalid_argument on unknown words.
/// Subject indices are auto-detected as every subject-vocabulary token.
TokenPrompt encode_prompt(const Vocabulary& vocab, const std::string& text);

/// The unconditional prompt [sot, null, eot].
TokenPrompt null_prompt(const Vocabulary& vocab);

}  // namespace aex
