#include "aex/gsn.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <sstream>

namespace aex {

Eigen::MatrixXd scheduler_step(const Eigen::MatrixXd& z,
                               const Eigen::MatrixXd& eps_hat, int t,
                               const NoiseSchedule& sched,
                               SamplerVariant variant, Rng& rng) {
    if (t < 1 || t > sched.T)
        throw std::invalid_argument("scheduler_step: t outside [1, T]");
    if (z.rows() != eps_hat.rows() || z.cols() != eps_hat.cols())
        throw std::invalid_argument("scheduler_step: shape mismatch");
    const double ab_t = sched.alpha_bar(t);
    const double ab_prev = sched.alpha_bar(t - 1);
    const double beta_t = sched.beta(t);
    const double alpha_t = 1.0 - beta_t;

    Eigen::MatrixXd x0 = (z - std::sqrt(1.0 - ab_t) * eps_hat) / std::sqrt(ab_t);
    Eigen::MatrixXd mean = (std::sqrt(ab_prev) * beta_t * x0 +
                            std::sqrt(alpha_t) * (1.0 - ab_prev) * z) /
                           (1.0 - ab_t);
    if (variant == SamplerVariant::Stochastic && t > 1) {
        double var = (1.0 - ab_prev) / (1.0 - ab_t) * beta_t;
        mean += std::sqrt(var) * random_normal(rng, static_cast<int>(z.rows()),
                                               static_cast<int>(z.cols()));
    }
    return mean;
}

void GsnConfig::validate() const {
    // alpha_end == 0 is allowed so a forced zero-step run stays valid.
    if (!(alpha_start >= alpha_end && alpha_end >= 0))
        throw std::invalid_argument("gsn: need alpha_start >= alpha_end >= 0");
    if (update_window < 0)
        throw std::invalid_argument("gsn: negative update window");
    if (max_refinement_updates < 0)
        throw std::invalid_argument("gsn: negative refinement cap");
    for (size_t i = 0; i < checkpoints.size(); ++i) {
        if (checkpoints[i].first < 0 || checkpoints[i].first >= update_window)
            throw std::invalid_argument(
                "gsn: checkpoint iteration outside update window");
        if (i > 0) {
            if (checkpoints[i].first <= checkpoints[i - 1].first)
                throw std::invalid_argument(
                    "gsn: checkpoint iterations must strictly increase");
            if (checkpoints[i].second <= checkpoints[i - 1].second)
                throw std::invalid_argument(
                    "gsn: checkpoint thresholds must strictly increase");
        }
    }
    (void)kernel.matrix();  // validates size/sigma
}

std::optional<double> GsnConfig::checkpoint_threshold(int iteration) const {
    for (const auto& [it, thr] : checkpoints)
        if (it == iteration) return thr;
    return std::nullopt;
}

std::vector<ad::Var> compute_subject_losses(ad::Tape& tape, ad::Var A,
                                            int resolution,
                                            const std::vector<int>& subjects,
                                            const SmoothingKernel& kernel) {
    if (subjects.empty())
        throw std::invalid_argument("compute_subject_losses: empty subject set");
    std::vector<ad::Var> losses;
    for (int s : subjects) {
        ad::Var m = subject_map(tape, A, s, resolution);
        ad::Var sm = gaussian_smooth(tape, m, kernel);
        ad::Var mx = tape.max_all(sm);
        losses.push_back(tape.add_const(tape.scale(mx, -1.0), 1.0));
    }
    return losses;
}

ad::Var compute_loss(ad::Tape& tape, const std::vector<ad::Var>& losses,
                     int* argmax) {
    if (losses.empty())
        throw std::invalid_argument("compute_loss: empty loss set");
    return tape.max_of(losses, argmax);
}

double step_size(int iteration, const GsnConfig& config) {
    if (iteration < 0 || iteration >= config.update_window)
        throw std::invalid_argument("step_size: iteration outside update window");
    if (config.update_window == 1) return config.alpha_start;
    double frac =
        static_cast<double>(iteration) / (config.update_window - 1);
    return config.alpha_start + (config.alpha_end - config.alpha_start) * frac;
}

Eigen::MatrixXd update_latent(const Eigen::MatrixXd& z,
                              const Eigen::MatrixXd& g, double alpha) {
    if (z.rows() != g.rows() || z.cols() != g.cols())
        throw std::invalid_argument("update_latent: shape mismatch");
    if (!g.allFinite())
        throw std::runtime_error("update_latent: non-finite gradient");
    if (alpha == 0.0 || g.isZero(0.0)) return z;
    return z - alpha * g;
}

namespace {

/// Loss graph kept alive so the backward pass can be run on demand.
struct LossGraph {
    std::unique_ptr<ad::Tape> tape;
    ad::Var z;
    ad::Var loss;
    std::vector<ad::Var> subject_losses;
    std::vector<ad::Var> smoothed_maps;
    int argmax_subject = 0;
};

LossGraph build_loss_graph(const Model& m, const Eigen::MatrixXd& z, int t,
                           const TokenPrompt& prompt, const GsnConfig& config) {
    if (prompt.subject_indices.empty())
        throw std::invalid_argument("gsn: prompt has no subject tokens");
    for (int s : prompt.subject_indices)
        if (s < 1 || s >= prompt.length())
            throw std::invalid_argument("gsn: subject index out of range");

    LossGraph g;
    g.tape = std::make_unique<ad::Tape>();
    ad::Tape& tape = *g.tape;
    ParamVars pv = leaf_params(tape, m);
    g.z = tape.leaf(z);
    ForwardResult fr = denoiser_forward(tape, m, pv, g.z, t, prompt);
    std::vector<int> res(fr.attn.size(), fr.attn_resolution);
    ad::Var agg = aggregate_attention(tape, fr.attn, res,
                                      m.config.attention_resolution);
    ad::Var rw = reweight_without_sot(tape, agg, config.softmax_mode);
    for (int s : prompt.subject_indices) {
        ad::Var map = subject_map(tape, rw, s, m.config.attention_resolution);
        ad::Var sm = gaussian_smooth(tape, map, config.kernel);
        g.smoothed_maps.push_back(sm);
        ad::Var mx = tape.max_all(sm);
        g.subject_losses.push_back(tape.add_const(tape.scale(mx, -1.0), 1.0));
    }
    g.loss = compute_loss(tape, g.subject_losses, &g.argmax_subject);
    return g;
}

GsnEval eval_from_graph(LossGraph& g, bool want_grad) {
    GsnEval e;
    e.loss = g.loss.value()(0, 0);
    e.argmax_subject = g.argmax_subject;
    for (const ad::Var& l : g.subject_losses) {
        e.subject_losses.push_back(l.value()(0, 0));
        e.smoothed_maxima.push_back(1.0 - l.value()(0, 0));
    }
    for (const ad::Var& m : g.smoothed_maps) e.smoothed_maps.push_back(m.value());
    if (want_grad) {
        g.tape->backward(g.loss);
        e.grad = g.z.grad();
    }
    return e;
}

std::string gsn_context(int t, const GsnEval& e) {
    std::ostringstream oss;
    oss << " (t=" << t << ", argmax subject " << e.argmax_subject << ", loss "
        << e.loss << ")";
    return oss.str();
}

}  // namespace

GsnEval evaluate_gsn_loss(const Model& m, const Eigen::MatrixXd& z, int t,
                          const TokenPrompt& prompt, const GsnConfig& config,
                          bool want_grad) {
    LossGraph g = build_loss_graph(m, z, t, prompt, config);
    return eval_from_graph(g, want_grad);
}

RefineResult refine_at_checkpoint(const Eigen::MatrixXd& z,
                                  const TokenPrompt& prompt, int t,
                                  const Model& m, double threshold,
                                  double alpha, const GsnConfig& config) {
    RefineResult r;
    r.z = z;
    while (true) {
        LossGraph g = build_loss_graph(m, r.z, t, prompt, config);
        double loss = g.loss.value()(0, 0);
        if (!(loss > 1.0 - threshold)) {
            // Every subject's max smoothed attention is >= threshold.
            r.threshold_met = true;
            break;
        }
        GsnEval e = eval_from_graph(g, /*want_grad=*/true);
        try {
            r.z = update_latent(r.z, e.grad, alpha);
        } catch (const std::runtime_error& err) {
            throw std::runtime_error(err.what() + gsn_context(t, e));
        }
        if (++r.updates >= config.max_refinement_updates) break;
    }
    return r;
}

std::pair<Eigen::MatrixXd, StepDiagnostics> gsn_step(
    const Eigen::MatrixXd& z, const TokenPrompt& prompt, int t, int iteration,
    const Model& m, const GsnConfig& config, SamplerVariant variant,
    Rng& rng) {
    StepDiagnostics diag;
    diag.iteration = iteration;
    diag.t = t;

    Eigen::MatrixXd z_cur = z;
    const bool in_window =
        config.enabled && iteration >= 0 && iteration < config.update_window;
    if (in_window) {
        config.validate();
        GsnEval e = evaluate_gsn_loss(m, z_cur, t, prompt, config, true);
        diag.subject_losses = e.subject_losses;
        diag.loss = e.loss;
        diag.argmax_subject = e.argmax_subject;
        diag.alpha = step_size(iteration, config);
        diag.updated = true;
        try {
            z_cur = update_latent(z_cur, e.grad, diag.alpha);
        } catch (const std::runtime_error& err) {
            throw std::runtime_error(err.what() + gsn_context(t, e) +
                                     " at iteration " +
                                     std::to_string(iteration));
        }
        if (auto thr = config.checkpoint_threshold(iteration)) {
            diag.checkpoint = true;
            RefineResult rr = refine_at_checkpoint(z_cur, prompt, t, m, *thr,
                                                   diag.alpha, config);
            z_cur = rr.z;
            diag.refinement_updates = rr.updates;
            diag.threshold_met = rr.threshold_met;
        }
    }

    LatentState state{z_cur, m.config.latent_resolution, t};
    Eigen::MatrixXd eps_c = denoise_step(state, prompt, m, false).first;
    Eigen::MatrixXd eps_u =
        denoise_step(state, null_prompt(m.vocab), m, false).first;
    Eigen::MatrixXd eps = cfg_combine(eps_c, eps_u, m.config.guidance_scale);
    Eigen::MatrixXd z_prev =
        scheduler_step(z_cur, eps, t, m.schedule, variant, rng);
    return {std::move(z_prev), std::move(diag)};
}

std::pair<Image, GenerationRecord> sample(const Model& m,
                                          const TokenPrompt& prompt,
                                          uint64_t seed, const GsnConfig* gsn,
                                          const SampleOptions& opts) {
    for (int s : prompt.subject_indices)
        if (s < 0 || s >= prompt.length())
            throw std::invalid_argument("sample: subject index out of range");
    if (gsn && gsn->enabled && prompt.subject_indices.empty())
        throw std::invalid_argument("sample: GSN requires subject tokens");

    GsnConfig disabled;
    disabled.enabled = false;
    const GsnConfig& config = gsn ? *gsn : disabled;

    GenerationRecord rec;
    rec.seed = seed;
    rec.prompt_text = prompt.text;

    Rng rng(seed);
    const int P = m.config.latent_resolution, C = m.config.channels;
    Eigen::MatrixXd z = random_normal(rng, P * P, C);

    const int T = m.schedule.T;
    for (int i = 0; i < T; ++i) {
        int t = T - i;
        bool want_snapshot =
            std::find(opts.attention_snapshot_iterations.begin(),
                      opts.attention_snapshot_iterations.end(),
                      i) != opts.attention_snapshot_iterations.end();
        if ((want_snapshot || i == T - 1) && !prompt.subject_indices.empty()) {
            GsnEval e = evaluate_gsn_loss(m, z, t, prompt, config, false);
            if (want_snapshot) rec.attention_snapshots[i] = e.smoothed_maps;
            if (i == T - 1) rec.final_subject_maps = e.smoothed_maps;
        }
        auto [z_next, diag] = gsn_step(z, prompt, t, i, m, config,
                                       opts.variant, rng);
        z = std::move(z_next);
        if (diag.refinement_updates > 0) rec.refinement_triggered = true;
        rec.steps.push_back(std::move(diag));
    }
    return {latent_to_image(z, P, true), std::move(rec)};
}

}  // namespace aex
