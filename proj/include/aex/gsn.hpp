#pragma once

#include <map>
#include <optional>

#include "aex/model.hpp"
#include "aex/probe.hpp"

namespace aex {

enum class SamplerVariant { Deterministic, Stochastic };

/// z_{t-1} from (z_t, eps_hat). The deterministic variant is the DDPM
/// posterior mean; the stochastic variant adds posterior-variance noise.
Eigen::MatrixXd scheduler_step(const Eigen::MatrixXd& z,
                               const Eigen::MatrixXd& eps_hat, int t,
                               const NoiseSchedule& sched,
                               SamplerVariant variant, Rng& rng);

struct GsnConfig {
    bool enabled = true;
    double alpha_start = 20.0;
    double alpha_end = 10.0;
    /// Latent updates run at iteration indices [0, update_window).
    int update_window = 25;
    /// (iteration index, required max smoothed attention) pairs.
    std::vector<std::pair<int, double>> checkpoints = {
        {0, 0.05}, {10, 0.5}, {20, 0.8}};
    int max_refinement_updates = 20;
    SmoothingKernel kernel{3, 0.5};
    SoftmaxMode softmax_mode = SoftmaxMode::ValueLogits;

    void validate() const;
    std::optional<double> checkpoint_threshold(int iteration) const;
};

struct StepDiagnostics {
    int iteration = 0;
    int t = 0;
    std::vector<double> subject_losses;
    double loss = 0.0;
    int argmax_subject = 0;
    double alpha = 0.0;
    int refinement_updates = 0;
    bool checkpoint = false;
    bool threshold_met = false;
    bool updated = false;
};

// ---- Loss pieces on an existing tape ------------------------------------

/// L_s = 1 - max(smooth(subject_map(A, s))) per subject index. A must be
/// the re-weighted aggregated attention.
std::vector<ad::Var> compute_subject_losses(ad::Tape& tape, ad::Var A,
                                            int resolution,
                                            const std::vector<int>& subjects,
                                            const SmoothingKernel& kernel);

/// L = max_s L_s; argmax ties break toward the lowest subject position.
ad::Var compute_loss(ad::Tape& tape, const std::vector<ad::Var>& losses,
                     int* argmax = nullptr);

/// Linear step-size schedule over the update window. Throws when the
/// iteration lies outside the window.
double step_size(int iteration, const GsnConfig& config);

/// z - alpha * g; throws std::runtime_error on non-finite gradients.
Eigen::MatrixXd update_latent(const Eigen::MatrixXd& z,
                              const Eigen::MatrixXd& g, double alpha);

/// One full loss evaluation at (z, t): conditional forward, aggregate,
/// re-weight, smooth, max. grad is d(L)/dz when want_grad.
struct GsnEval {
    double loss = 0.0;
    std::vector<double> subject_losses;
    std::vector<double> smoothed_maxima;
    std::vector<Eigen::MatrixXd> smoothed_maps;
    int argmax_subject = 0;
    Eigen::MatrixXd grad;
};
GsnEval evaluate_gsn_loss(const Model& m, const Eigen::MatrixXd& z, int t,
                          const TokenPrompt& prompt, const GsnConfig& config,
                          bool want_grad);

/// Iterative refinement: repeat {forward, loss, update} while
/// L > 1 - threshold, capped at max_refinement_updates. Returns the
/// refined latent, the update count, and whether the threshold was met.
struct RefineResult {
    Eigen::MatrixXd z;
    int updates = 0;
    bool threshold_met = false;
};
RefineResult refine_at_checkpoint(const Eigen::MatrixXd& z,
                                  const TokenPrompt& prompt, int t,
                                  const Model& m, double threshold,
                                  double alpha, const GsnConfig& config);

/// One Attend-and-Excite denoising step (forward with attention capture,
/// loss, latent update, optional refinement, final forward, scheduler).
std::pair<Eigen::MatrixXd, StepDiagnostics> gsn_step(
    const Eigen::MatrixXd& z, const TokenPrompt& prompt, int t, int iteration,
    const Model& m, const GsnConfig& config, SamplerVariant variant, Rng& rng);

// ---- Full sampling loop ---------------------------------------------------

struct SampleOptions {
    SamplerVariant variant = SamplerVariant::Deterministic;
    /// Iterations at which per-subject smoothed attention maps are stored.
    std::vector<int> attention_snapshot_iterations;
};

struct GenerationRecord {
    uint64_t seed = 0;
    std::string prompt_text;
    std::vector<StepDiagnostics> steps;
    /// iteration -> per-subject smoothed attention maps (pre-update).
    std::map<int, std::vector<Eigen::MatrixXd>> attention_snapshots;
    /// Per-subject smoothed maps captured at the last iteration.
    std::vector<Eigen::MatrixXd> final_subject_maps;
    bool refinement_triggered = false;
};

std::pair<Image, GenerationRecord> sample(const Model& m,
                                          const TokenPrompt& prompt,
                                          uint64_t seed,
                                          const GsnConfig* gsn,
                                          const SampleOptions& opts = {});

}  // namespace aex
