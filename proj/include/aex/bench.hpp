#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "aex/detector.hpp"
#include "aex/world.hpp"

namespace aex {

enum class SubsetKind {
    SubjectSubject,
    SubjectColoredObject,
    ColoredColored,
};

std::string subset_kind_name(SubsetKind kind);
SubsetKind subset_kind_from_name(const std::string& name);

/// One benchmark prompt with its two single-subject sub-prompts.
struct BenchPrompt {
    std::string text;
    std::string sub_a;
    std::string sub_b;
};

struct BenchmarkSuite {
    SubsetKind kind = SubsetKind::SubjectSubject;
    std::vector<BenchPrompt> prompts;
    int seeds_per_prompt = 64;
};

/// Builds the prompt list for one subset. Pair subsets ("a X and a Y")
/// enumerate C(n, 2) unordered pairs of items_a; the mixed subset pairs
/// every items_a entry with every items_b entry (n * m prompts). Colored
/// positions get a color drawn uniformly with the given rng, so the suite
/// is deterministic per seed. Duplicate items are rejected.
BenchmarkSuite build_benchmark(const std::vector<std::string>& items_a,
                               const std::vector<std::string>& items_b,
                               const std::vector<std::string>& colors,
                               SubsetKind kind, Rng& rng,
                               int seeds_per_prompt = 64);

/// Splits "a [color] X and a [color] Y" into its two sub-prompts. Only the
/// three benchmark templates are recognized; anything else throws.
std::pair<std::string, std::string> split_prompt(const Vocabulary& vocab,
                                                 const std::string& text);

/// Embedding/captioning seam standing in for CLIP and BLIP. Vectors must
/// be unit length within 1e-6.
class EmbeddingBackend {
public:
    virtual ~EmbeddingBackend() = default;
    virtual Eigen::VectorXd embed_text(const std::string& text) const = 0;
    virtual Eigen::VectorXd embed_image(const Image& img) const = 0;
    virtual bool has_caption() const { return false; }
    virtual std::string caption(const Image&) const {
        throw std::logic_error("backend has no captioner");
    }
    /// Whether concurrent calls are safe; the harness serializes otherwise.
    virtual bool thread_safe() const { return false; }
};

/// Mean text embedding over templates (each containing "{}"), renormalized.
Eigen::VectorXd template_embed_text(const std::string& text,
                                    const EmbeddingBackend& backend,
                                    const std::vector<std::string>& templates);

/// The default template list shipped with the repo.
std::vector<std::string> default_templates();

/// Mean cosine between the template-embedded prompt and each image.
double full_prompt_similarity(const std::vector<Image>& images,
                              const std::string& prompt,
                              const EmbeddingBackend& backend,
                              const std::vector<std::string>& templates);

/// Per image, min (resp. max) of the two sub-prompt cosines; mean over
/// images.
double min_object_similarity(const std::vector<Image>& images,
                             const BenchPrompt& prompt,
                             const EmbeddingBackend& backend,
                             const std::vector<std::string>& templates);
double max_object_similarity(const std::vector<Image>& images,
                             const BenchPrompt& prompt,
                             const EmbeddingBackend& backend,
                             const std::vector<std::string>& templates);

/// Reference images for one sub-prompt (toy world: renderer-made
/// single-subject scenes).
struct SubjectReferences {
    std::string sub_prompt;
    std::vector<Image> images;
};

/// Mean reference similarity per subject, then mean over subjects.
double upper_bound(const std::vector<SubjectReferences>& refs,
                   const EmbeddingBackend& backend,
                   const std::vector<std::string>& templates);

/// Mean cosine between the template-embedded prompt and the embedded
/// caption of each image. Requires a captioning backend.
double text_text_similarity(const std::vector<Image>& images,
                            const std::string& prompt,
                            const EmbeddingBackend& backend,
                            const std::vector<std::string>& templates);

/// True when every pixel is near the bottom of the range; the standard
/// sentinel for failed generations.
bool is_black_image(const Image& img, double threshold = -0.95);

/// Drops images flagged by the sentinel predicate, counting the exclusions.
struct ExclusionResult {
    std::vector<Image> kept;
    int excluded = 0;
};
ExclusionResult exclude_images(
    const std::vector<Image>& images,
    const std::function<bool(const Image&)>& sentinel = {});

/// Neglect statistics over (image, prompt) runs judged by the detector.
struct NeglectStats {
    double neglect_rate = 0.0;
    double binding_error_rate = 0.0;
    int runs = 0;
    int neglected = 0;
    int binding_errors = 0;
};
NeglectStats neglect_rate(const std::vector<Image>& images,
                          const std::vector<TokenPrompt>& prompts,
                          const Vocabulary& vocab,
                          const DetectorOptions& opts = {});

/// Exact backend for the toy world: prompts and detector outputs map to
/// normalized concept indicator vectors (one dim per shape, one per
/// (shape, color) pair, one for the empty scene), so every CLIP-space
/// formula is computable in closed form.
std::unique_ptr<EmbeddingBackend> oracle_backend(
    const Vocabulary& vocab, const DetectorOptions& opts = {});

/// Two-sided paired t-test.
struct PairedTest {
    double t = 0.0;
    int df = 0;
    double p_two_sided = 1.0;
    double mean_diff = 0.0;
};
PairedTest paired_ttest(const std::vector<double>& a,
                        const std::vector<double>& b);

}  // namespace aex
