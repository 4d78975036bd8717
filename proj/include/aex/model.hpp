#pragma once

#include <map>
#include <string>
#include <vector>

#include "aex/ad.hpp"
#include "aex/common.hpp"
#include "aex/schedule.hpp"
#include "aex/vocab.hpp"

namespace aex {

struct DenoiserConfig {
    int latent_resolution = 32;   // P
    int attention_resolution = 8; // G: token grid for all attention layers
    int channels = 3;
    int dim = 32;
    int heads = 4;
    int blocks = 2;
    int text_blocks = 1;
    int mlp_mult = 4;
    int max_prompt_len = 12;
    double cond_dropout = 0.1;
    double guidance_scale = 7.5;

    int patch() const { return latent_resolution / attention_resolution; }
    int tokens() const { return attention_resolution * attention_resolution; }
    void validate() const;
};

/// One cross-attention probability map: (G*G) x N, each spatial row a
/// distribution over prompt tokens.
struct AttentionMap {
    int layer = 0;
    int head = 0;
    int resolution = 0;
    Eigen::MatrixXd probs;
};

struct AttentionStack {
    std::vector<AttentionMap> maps;
    int prompt_len = 0;
};

struct Model {
    DenoiserConfig config;
    NoiseSchedule schedule;
    Vocabulary vocab;
    /// Ordered named parameters (order is the checkpoint layout).
    std::vector<std::pair<std::string, Eigen::MatrixXd>> params;
    std::vector<double> loss_trace;

    Eigen::MatrixXd& param(const std::string& name);
    const Eigen::MatrixXd& param(const std::string& name) const;

    static Model init(const DenoiserConfig& config, const NoiseSchedule& sched,
                      const Vocabulary& vocab, Rng& rng);
};

using ParamVars = std::map<std::string, ad::Var>;

/// Puts every parameter on the tape (grads flow back to these leaves).
ParamVars leaf_params(ad::Tape& tape, const Model& m);

/// Result of a conditional forward pass on a tape. attn holds the
/// cross-attention probability vars, one per (layer, head).
struct ForwardResult {
    ad::Var eps;
    std::vector<ad::Var> attn;
    std::vector<std::pair<int, int>> attn_ids;
    int attn_resolution = 0;
    int prompt_len = 0;
};

ForwardResult denoiser_forward(ad::Tape& tape, const Model& m,
                               const ParamVars& pv, ad::Var z, int t,
                               const TokenPrompt& prompt);

/// Off-tape single-step denoiser: returns the noise prediction and, when
/// requested, the cross-attention stack of the conditional pass.
std::pair<Eigen::MatrixXd, AttentionStack> denoise_step(
    const LatentState& zt, const TokenPrompt& prompt, const Model& m,
    bool capture_attention);

/// Classifier-free guidance: eps_uncond + s * (eps_cond - eps_uncond).
Eigen::MatrixXd cfg_combine(const Eigen::MatrixXd& eps_cond,
                            const Eigen::MatrixXd& eps_uncond, double s);

struct TrainOptions {
    int steps = 3000;
    int batch_size = 32;
    double lr = 2e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    int log_every = 50;
    bool verbose = false;
};

struct TrainSample {
    Eigen::MatrixXd x0;  // clean latent (P*P) x C
    TokenPrompt prompt;
};

/// Eq.-style epsilon-prediction training with conditioning dropout to the
/// null prompt. Returns the trained model with its loss trace filled in.
Model train_denoiser(const std::vector<TrainSample>& dataset,
                     const DenoiserConfig& config, const NoiseSchedule& sched,
                     const Vocabulary& vocab, Rng& rng,
                     const TrainOptions& opts);

/// Mean per-element squared error of the model's prediction on one batch
/// with fixed noise; used by tests and the training loop.
double eval_loss(const Model& m, const std::vector<TrainSample>& batch,
                 const std::vector<int>& ts,
                 const std::vector<Eigen::MatrixXd>& noises,
                 const std::vector<bool>& drop_cond);

}  // namespace aex
