#include "aex/bench.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <sstream>

namespace aex {

std::string subset_kind_name(SubsetKind kind) {
    switch (kind) {
        case SubsetKind::SubjectSubject: return "subject-subject";
        case SubsetKind::SubjectColoredObject: return "subject-coloredObject";
        case SubsetKind::ColoredColored: return "coloredObject-coloredObject";
    }
    throw std::invalid_argument("unknown subset kind");
}

SubsetKind subset_kind_from_name(const std::string& name) {
    if (name == "subject-subject") return SubsetKind::SubjectSubject;
    if (name == "subject-coloredObject") return SubsetKind::SubjectColoredObject;
    if (name == "coloredObject-coloredObject") return SubsetKind::ColoredColored;
    throw std::invalid_argument("unknown subset kind: " + name);
}

namespace {

void check_items(const std::vector<std::string>& items, const char* which) {
    if (items.size() < 2)
        throw std::invalid_argument(std::string("build_benchmark: need >= 2 ") +
                                    which);
    std::set<std::string> seen(items.begin(), items.end());
    if (seen.size() != items.size())
        throw std::invalid_argument(std::string("build_benchmark: duplicate ") +
                                    which);
}

std::string pick_color(const std::vector<std::string>& colors, Rng& rng) {
    std::uniform_int_distribution<size_t> d(0, colors.size() - 1);
    return colors[d(rng)];
}

}  // namespace

BenchmarkSuite build_benchmark(const std::vector<std::string>& items_a,
                               const std::vector<std::string>& items_b,
                               const std::vector<std::string>& colors,
                               SubsetKind kind, Rng& rng,
                               int seeds_per_prompt) {
    if (seeds_per_prompt < 1)
        throw std::invalid_argument("build_benchmark: seeds_per_prompt < 1");
    check_items(items_a, "items");
    const bool colored = kind != SubsetKind::SubjectSubject;
    if (colored && colors.empty())
        throw std::invalid_argument("build_benchmark: colored kind needs colors");

    BenchmarkSuite suite;
    suite.kind = kind;
    suite.seeds_per_prompt = seeds_per_prompt;

    auto add = [&suite](const std::string& a, const std::string& b) {
        BenchPrompt p;
        p.sub_a = "a " + a;
        p.sub_b = "a " + b;
        p.text = p.sub_a + " and " + p.sub_b;
        suite.prompts.push_back(std::move(p));
    };

    switch (kind) {
        case SubsetKind::SubjectSubject:
            for (size_t i = 0; i < items_a.size(); ++i)
                for (size_t j = i + 1; j < items_a.size(); ++j)
                    add(items_a[i], items_a[j]);
            break;
        case SubsetKind::SubjectColoredObject:
            check_items(items_b, "objects");
            for (const std::string& a : items_a)
                for (const std::string& b : items_b)
                    add(a, pick_color(colors, rng) + " " + b);
            break;
        case SubsetKind::ColoredColored:
            for (size_t i = 0; i < items_a.size(); ++i)
                for (size_t j = i + 1; j < items_a.size(); ++j)
                    add(pick_color(colors, rng) + " " + items_a[i],
                        pick_color(colors, rng) + " " + items_a[j]);
            break;
    }
    return suite;
}

namespace {

std::vector<std::string> split_words(const std::string& text) {
    std::istringstream iss(text);
    std::vector<std::string> out;
    std::string w;
    while (iss >> w) {
        std::transform(w.begin(), w.end(), w.begin(),
                       [](unsigned char c) { return std::tolower(c); });
        out.push_back(w);
    }
    return out;
}

}  // namespace

std::pair<std::string, std::string> split_prompt(const Vocabulary& vocab,
                                                 const std::string& text) {
    std::vector<std::string> w = split_words(text);
    auto is_shape = [&](size_t i) {
        if (i >= w.size()) return false;
        for (int id : vocab.subject_tokens)
            if (vocab.tokens[id] == w[i]) return true;
        return false;
    };
    auto is_color = [&](size_t i) {
        if (i >= w.size()) return false;
        for (int id : vocab.attribute_tokens)
            if (vocab.tokens[id] == w[i]) return true;
        return false;
    };
    // Grammar: "a" [color] shape "and" "a" [color] shape
    auto piece = [&](size_t& i) -> std::string {
        if (i >= w.size() || w[i] != "a")
            throw std::invalid_argument("split_prompt: unsupported template");
        ++i;
        std::string out = "a";
        if (is_color(i)) {
            out += " " + w[i];
            ++i;
        }
        if (!is_shape(i))
            throw std::invalid_argument("split_prompt: unsupported template");
        out += " " + w[i];
        ++i;
        return out;
    };
    size_t i = 0;
    std::string a = piece(i);
    if (i >= w.size() || w[i] != "and")
        throw std::invalid_argument("split_prompt: not a two-subject prompt");
    ++i;
    std::string b = piece(i);
    if (i != w.size())
        throw std::invalid_argument("split_prompt: unsupported template");
    return {a, b};
}

namespace {

Eigen::VectorXd checked_unit(Eigen::VectorXd v, const char* what) {
    if (std::abs(v.norm() - 1.0) > 1e-6)
        throw std::runtime_error(std::string(what) +
                                 ": backend vector is not unit length");
    return v;
}

}  // namespace

std::vector<std::string> default_templates() {
    return {
        "{}",
        "a photo of {}",
        "a picture of {}",
        "a rendering of {}",
        "an image showing {}",
        "a simple drawing of {}",
        "a scene with {}",
        "a small picture of {}",
    };
}

Eigen::VectorXd template_embed_text(const std::string& text,
                                    const EmbeddingBackend& backend,
                                    const std::vector<std::string>& templates) {
    if (templates.empty())
        throw std::invalid_argument("template_embed_text: empty template list");
    Eigen::VectorXd acc;
    for (const std::string& tmpl : templates) {
        size_t pos = tmpl.find("{}");
        if (pos == std::string::npos)
            throw std::invalid_argument(
                "template_embed_text: template lacks a {} placeholder: " +
                tmpl);
        std::string filled = tmpl;
        filled.replace(pos, 2, text);
        Eigen::VectorXd e =
            checked_unit(backend.embed_text(filled), "template_embed_text");
        if (acc.size() == 0)
            acc = e;
        else
            acc += e;
    }
    acc /= static_cast<double>(templates.size());
    double n = acc.norm();
    if (n < 1e-12)
        throw std::runtime_error(
            "template_embed_text: template embeddings cancel out");
    return acc / n;
}

double full_prompt_similarity(const std::vector<Image>& images,
                              const std::string& prompt,
                              const EmbeddingBackend& backend,
                              const std::vector<std::string>& templates) {
    if (images.empty())
        throw std::invalid_argument("full_prompt_similarity: no images");
    Eigen::VectorXd p = template_embed_text(prompt, backend, templates);
    double total = 0.0;
    for (const Image& img : images)
        total += p.dot(
            checked_unit(backend.embed_image(img), "full_prompt_similarity"));
    return total / static_cast<double>(images.size());
}

namespace {

double object_similarity(const std::vector<Image>& images,
                         const BenchPrompt& prompt,
                         const EmbeddingBackend& backend,
                         const std::vector<std::string>& templates,
                         bool take_min) {
    if (images.empty())
        throw std::invalid_argument("object_similarity: no images");
    if (prompt.sub_a.empty() || prompt.sub_b.empty())
        throw std::invalid_argument("object_similarity: missing sub-prompts");
    Eigen::VectorXd a = template_embed_text(prompt.sub_a, backend, templates);
    Eigen::VectorXd b = template_embed_text(prompt.sub_b, backend, templates);
    double total = 0.0;
    for (const Image& img : images) {
        Eigen::VectorXd e =
            checked_unit(backend.embed_image(img), "object_similarity");
        double ca = a.dot(e), cb = b.dot(e);
        total += take_min ? std::min(ca, cb) : std::max(ca, cb);
    }
    return total / static_cast<double>(images.size());
}

}  // namespace

double min_object_similarity(const std::vector<Image>& images,
                             const BenchPrompt& prompt,
                             const EmbeddingBackend& backend,
                             const std::vector<std::string>& templates) {
    return object_similarity(images, prompt, backend, templates, true);
}

double max_object_similarity(const std::vector<Image>& images,
                             const BenchPrompt& prompt,
                             const EmbeddingBackend& backend,
                             const std::vector<std::string>& templates) {
    return object_similarity(images, prompt, backend, templates, false);
}

double upper_bound(const std::vector<SubjectReferences>& refs,
                   const EmbeddingBackend& backend,
                   const std::vector<std::string>& templates) {
    if (refs.empty()) throw std::invalid_argument("upper_bound: no subjects");
    double total = 0.0;
    for (const SubjectReferences& r : refs) {
        if (r.images.empty())
            throw std::invalid_argument("upper_bound: subject without references: " +
                                        r.sub_prompt);
        Eigen::VectorXd p =
            template_embed_text(r.sub_prompt, backend, templates);
        double s = 0.0;
        for (const Image& img : r.images)
            s += p.dot(checked_unit(backend.embed_image(img), "upper_bound"));
        total += s / static_cast<double>(r.images.size());
    }
    return total / static_cast<double>(refs.size());
}

double text_text_similarity(const std::vector<Image>& images,
                            const std::string& prompt,
                            const EmbeddingBackend& backend,
                            const std::vector<std::string>& templates) {
    if (!backend.has_caption())
        throw std::invalid_argument("text_text_similarity: backend cannot caption");
    if (images.empty())
        throw std::invalid_argument("text_text_similarity: no images");
    Eigen::VectorXd p = template_embed_text(prompt, backend, templates);
    double total = 0.0;
    for (const Image& img : images) {
        Eigen::VectorXd c = checked_unit(
            backend.embed_text(backend.caption(img)), "text_text_similarity");
        total += p.dot(c);
    }
    return total / static_cast<double>(images.size());
}

bool is_black_image(const Image& img, double threshold) {
    for (double v : img.data)
        if (v > threshold) return false;
    return true;
}

ExclusionResult exclude_images(
    const std::vector<Image>& images,
    const std::function<bool(const Image&)>& sentinel) {
    std::function<bool(const Image&)> pred = sentinel;
    if (!pred) pred = [](const Image& i) { return is_black_image(i); };
    ExclusionResult out;
    for (const Image& img : images) {
        if (pred(img))
            ++out.excluded;
        else
            out.kept.push_back(img);
    }
    return out;
}

NeglectStats neglect_rate(const std::vector<Image>& images,
                          const std::vector<TokenPrompt>& prompts,
                          const Vocabulary& vocab,
                          const DetectorOptions& opts) {
    if (images.size() != prompts.size())
        throw std::invalid_argument("neglect_rate: image/prompt count mismatch");
    NeglectStats st;
    st.runs = static_cast<int>(images.size());
    for (size_t i = 0; i < images.size(); ++i) {
        DetectionResult r = detect_subjects(images[i], prompts[i], vocab, opts);
        if (!r.all_present()) ++st.neglected;
        if (r.any_binding_error()) ++st.binding_errors;
    }
    if (st.runs > 0) {
        st.neglect_rate = static_cast<double>(st.neglected) / st.runs;
        st.binding_error_rate = static_cast<double>(st.binding_errors) / st.runs;
    }
    return st;
}

namespace {

/// Concept indicator space: one dim per shape, one per (shape, color)
/// pair, plus one "empty scene" dim so a blank image still embeds to a
/// unit vector orthogonal to every prompt.
class OracleBackend : public EmbeddingBackend {
public:
    OracleBackend(const Vocabulary& vocab, const DetectorOptions& opts)
        : vocab_(vocab), opts_(opts) {
        for (size_t i = 0; i < vocab.subject_tokens.size(); ++i) {
            shape_by_id_[vocab.subject_tokens[i]] = static_cast<int>(i);
            shape_by_word_[vocab.tokens[vocab.subject_tokens[i]]] =
                static_cast<int>(i);
        }
        for (size_t i = 0; i < vocab.attribute_tokens.size(); ++i) {
            color_by_id_[vocab.attribute_tokens[i]] = static_cast<int>(i);
            color_by_word_[vocab.tokens[vocab.attribute_tokens[i]]] =
                static_cast<int>(i);
        }
        const int S = static_cast<int>(vocab.subject_tokens.size());
        const int C = static_cast<int>(vocab.attribute_tokens.size());
        dim_ = S + S * C + 1;
    }

    Eigen::VectorXd embed_text(const std::string& text) const override {
        Eigen::VectorXd v = Eigen::VectorXd::Zero(dim_);
        if (text == kEmptyCaption) {
            v(dim_ - 1) = 1.0;
            return v;
        }
        std::vector<std::string> words = split_words(text);
        bool any = false;
        for (size_t i = 0; i < words.size(); ++i) {
            int color = -1;
            size_t j = i;
            int c = lookup_word(color_by_word_, words[j]);
            if (c >= 0 && j + 1 < words.size() &&
                lookup_word(shape_by_word_, words[j + 1]) >= 0) {
                color = c;
                ++j;
            }
            int shape = lookup_word(shape_by_word_, words[j]);
            if (shape < 0) continue;
            mark(v, shape, color);
            any = true;
            i = j;
        }
        if (!any)
            throw std::invalid_argument(
                "oracle backend: no known subject in prompt: " + text);
        return v.normalized();
    }

    Eigen::VectorXd embed_image(const Image& img) const override {
        Eigen::VectorXd v = Eigen::VectorXd::Zero(dim_);
        bool any = false;
        for (const SubjectDetection& d : detect_all_shapes(img, vocab_, opts_)) {
            if (!d.present) continue;
            int color = d.location ? lookup_id(color_by_id_, d.location->color_id)
                                   : -1;
            mark(v, lookup_id(shape_by_id_, d.shape_id), color);
            any = true;
        }
        if (!any) v(dim_ - 1) = 1.0;
        return v.normalized();
    }

    bool has_caption() const override { return true; }

    std::string caption(const Image& img) const override {
        std::string out;
        for (const SubjectDetection& d : detect_all_shapes(img, vocab_, opts_)) {
            if (!d.present) continue;
            if (!out.empty()) out += " and ";
            out += "a ";
            if (d.location && d.location->color_id >= 0)
                out += vocab_.tokens[d.location->color_id] + " ";
            out += vocab_.tokens[d.shape_id];
        }
        return out.empty() ? kEmptyCaption : out;
    }

    bool thread_safe() const override { return true; }

private:
    static constexpr const char* kEmptyCaption = "an empty scene";

    static int lookup_word(const std::map<std::string, int>& m,
                           const std::string& w) {
        auto it = m.find(w);
        return it == m.end() ? -1 : it->second;
    }

    static int lookup_id(const std::map<int, int>& m, int id) {
        auto it = m.find(id);
        return it == m.end() ? -1 : it->second;
    }

    void mark(Eigen::VectorXd& v, int shape, int color) const {
        if (shape < 0) throw std::logic_error("oracle backend: bad shape dim");
        const int S = static_cast<int>(vocab_.subject_tokens.size());
        const int C = static_cast<int>(vocab_.attribute_tokens.size());
        v(shape) = 1.0;
        if (color >= 0) v(S + shape * C + color) = 1.0;
    }

    Vocabulary vocab_;
    DetectorOptions opts_;
    std::map<int, int> shape_by_id_;
    std::map<int, int> color_by_id_;
    std::map<std::string, int> shape_by_word_;
    std::map<std::string, int> color_by_word_;
    int dim_ = 0;
};

}  // namespace

std::unique_ptr<EmbeddingBackend> oracle_backend(const Vocabulary& vocab,
                                                 const DetectorOptions& opts) {
    return std::make_unique<OracleBackend>(vocab, opts);
}

namespace {

/// Regularized incomplete beta via Lentz's continued fraction.
double betacf(double a, double b, double x) {
    const int kMaxIter = 200;
    const double eps = 3e-14, fpmin = 1e-300;
    double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0, d = 1.0 - qab * x / qap;
    if (std::abs(d) < fpmin) d = fpmin;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < fpmin) d = fpmin;
        c = 1.0 + aa / c;
        if (std::abs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < fpmin) d = fpmin;
        c = 1.0 + aa / c;
        if (std::abs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < eps) break;
    }
    return h;
}

double incbeta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    double lnbeta = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                    a * std::log(x) + b * std::log(1.0 - x);
    double front = std::exp(lnbeta);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
    return 1.0 - std::exp(std::lgamma(a + b) - std::lgamma(a) -
                          std::lgamma(b) + b * std::log(1.0 - x) +
                          a * std::log(x)) *
                     betacf(b, a, 1.0 - x) / b;
}

}  // namespace

PairedTest paired_ttest(const std::vector<double>& a,
                        const std::vector<double>& b) {
    if (a.size() != b.size())
        throw std::invalid_argument("paired_ttest: length mismatch");
    const int n = static_cast<int>(a.size());
    if (n < 2) throw std::invalid_argument("paired_ttest: need >= 2 pairs");
    double mean = 0.0;
    for (int i = 0; i < n; ++i) mean += a[i] - b[i];
    mean /= n;
    double ss = 0.0;
    for (int i = 0; i < n; ++i) {
        double d = (a[i] - b[i]) - mean;
        ss += d * d;
    }
    PairedTest out;
    out.df = n - 1;
    out.mean_diff = mean;
    double sd = std::sqrt(ss / out.df);
    if (sd == 0.0) {
        out.t = mean == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
        out.p_two_sided = mean == 0.0 ? 1.0 : 0.0;
        return out;
    }
    out.t = mean / (sd / std::sqrt(static_cast<double>(n)));
    double x = out.df / (out.df + out.t * out.t);
    out.p_two_sided = incbeta(out.df / 2.0, 0.5, x);
    return out;
}

}  // namespace aex
