#pragma once

#include "aex/ad.hpp"
#include "aex/model.hpp"

namespace aex {

struct SmoothingKernel {
    int size = 3;
    double sigma = 0.5;

    /// Normalized size x size Gaussian; size 1 is the identity. Throws on
    /// even sizes.
    Eigen::MatrixXd matrix() const;
};

/// Whether the re-softmax over non-<sot> tokens treats the aggregated
/// probability values as logits directly, or their logs (which reduces to
/// renormalization).
enum class SoftmaxMode { ValueLogits, LogProbs };

/// Averaged (and optionally re-weighted) cross-attention. A is
/// (resolution^2) x token-count; token column j corresponds to prompt
/// position j + (sot_excluded ? 1 : 0).
struct AggregatedAttention {
    Eigen::MatrixXd A;
    int resolution = 0;
    bool sot_excluded = false;
};

// ---- Off-tape variants -------------------------------------------------

/// Unweighted mean over every (layer, head) map at target_resolution.
AggregatedAttention aggregate_attention(const AttentionStack& stack,
                                        int target_resolution);

AggregatedAttention reweight_without_sot(const AggregatedAttention& a,
                                         SoftmaxMode mode);

/// The s-slice (s an original prompt position, never the <sot> index) as a
/// resolution x resolution map.
Eigen::MatrixXd subject_map(const AggregatedAttention& a, int s);

Eigen::MatrixXd gaussian_smooth(const Eigen::MatrixXd& map,
                                const SmoothingKernel& k);

/// Among the word-piece positions of one subject, the piece with the
/// largest total attention mass; ties go to the lowest index.
int select_dominant_token(const AggregatedAttention& a,
                          const std::vector<int>& piece_indices);

// ---- Tape variants (used by the GSN loss graph) ------------------------

ad::Var aggregate_attention(ad::Tape& tape, const std::vector<ad::Var>& maps,
                            const std::vector<int>& resolutions,
                            int target_resolution);

ad::Var reweight_without_sot(ad::Tape& tape, ad::Var a, SoftmaxMode mode);

/// a must already have the <sot> column removed (columns are prompt
/// positions 1..N-1); returns the s-slice as a resolution^2 map.
ad::Var subject_map(ad::Tape& tape, ad::Var a, int s, int resolution);

ad::Var gaussian_smooth(ad::Tape& tape, ad::Var map, const SmoothingKernel& k);

}  // namespace aex
