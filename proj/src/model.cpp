#include "aex/model.hpp"

#include <cmath>
#include <iostream>

namespace aex {

void DenoiserConfig::validate() const {
    if (latent_resolution < 8)
        throw std::invalid_argument("config: latent_resolution too small");
    if (attention_resolution < 2 ||
        latent_resolution % attention_resolution != 0)
        throw std::invalid_argument(
            "config: attention_resolution must divide latent_resolution");
    if (dim % heads != 0)
        throw std::invalid_argument("config: dim must be divisible by heads");
    if (blocks < 1)
        throw std::invalid_argument(
            "config: need at least one cross-attention layer");
    if (text_blocks < 1)
        throw std::invalid_argument(
            "config: need at least one text self-attention layer");
    if (guidance_scale < 0)
        throw std::invalid_argument("config: negative guidance scale");
}

Eigen::MatrixXd& Model::param(const std::string& name) {
    for (auto& [n, m] : params)
        if (n == name) return m;
    throw std::out_of_range("no such parameter: " + name);
}

const Eigen::MatrixXd& Model::param(const std::string& name) const {
    for (const auto& [n, m] : params)
        if (n == name) return m;
    throw std::out_of_range("no such parameter: " + name);
}

namespace {

void add_linear(Model& m, Rng& rng, const std::string& name, int in, int out,
                double std_dev, bool zero = false) {
    Eigen::MatrixXd w = zero ? Eigen::MatrixXd::Zero(in, out)
                             : random_normal(rng, in, out, std_dev);
    m.params.emplace_back(name + ".w", std::move(w));
    m.params.emplace_back(name + ".b", Eigen::MatrixXd::Zero(1, out));
}

void add_ln(Model& m, const std::string& name, int d) {
    m.params.emplace_back(name + ".g", Eigen::MatrixXd::Ones(1, d));
    m.params.emplace_back(name + ".b", Eigen::MatrixXd::Zero(1, d));
}

void add_attn(Model& m, Rng& rng, const std::string& name, int d,
              double std_dev, double qk_std = 0.0) {
    if (qk_std == 0.0) qk_std = std_dev;
    for (const char* w : {".wq", ".wk"})
        m.params.emplace_back(name + w, random_normal(rng, d, d, qk_std));
    for (const char* w : {".wv", ".wo"})
        m.params.emplace_back(name + w, random_normal(rng, d, d, std_dev));
}

void add_mlp(Model& m, Rng& rng, const std::string& name, int d, int mult,
             double std_dev) {
    add_linear(m, rng, name + ".fc1", d, d * mult, std_dev);
    add_linear(m, rng, name + ".fc2", d * mult, d, std_dev);
}

}  // namespace

Model Model::init(const DenoiserConfig& config, const NoiseSchedule& sched,
                  const Vocabulary& vocab, Rng& rng) {
    config.validate();
    sched.validate();
    Model m;
    m.config = config;
    m.schedule = sched;
    m.vocab = vocab;

    const int d = config.dim;
    const double sd = 0.5 / std::sqrt(static_cast<double>(d));
    const int patch_dim = config.patch() * config.patch() * config.channels;

    m.params.emplace_back("tok_embed",
                          random_normal(rng, vocab.size(), d, 0.5));
    m.params.emplace_back("text_pos",
                          random_normal(rng, config.max_prompt_len, d, 0.1));
    for (int i = 0; i < config.text_blocks; ++i) {
        std::string p = "text" + std::to_string(i);
        add_ln(m, p + ".ln1", d);
        add_attn(m, rng, p + ".attn", d, sd);
        add_ln(m, p + ".ln2", d);
        add_mlp(m, rng, p + ".mlp", d, config.mlp_mult, sd);
    }
    add_ln(m, "text_ln", d);

    add_linear(m, rng, "patch", patch_dim, d, sd);
    m.params.emplace_back("img_pos",
                          random_normal(rng, config.tokens(), d, 0.1));
    add_linear(m, rng, "time.fc1", d, d, sd);
    add_linear(m, rng, "time.fc2", d, d, sd);

    for (int i = 0; i < config.blocks; ++i) {
        std::string p = "blk" + std::to_string(i);
        add_ln(m, p + ".ln1", d);
        add_attn(m, rng, p + ".self", d, sd);
        add_ln(m, p + ".ln2", d);
        // Hot query/key start: with the usual small init the cross-attention
        // logits stay near zero and the softmax never leaves the flat basin,
        // which starves attention-guided sampling of signal.
        add_attn(m, rng, p + ".cross", d, sd, 2.0 / std::sqrt(double(d)));
        add_ln(m, p + ".ln3", d);
        add_mlp(m, rng, p + ".mlp", d, config.mlp_mult, sd);
    }
    add_ln(m, "out.ln", d);
    // Zero-init output head: the untrained model predicts zero noise.
    add_linear(m, rng, "out", d, patch_dim, 0.0, /*zero=*/true);
    return m;
}

ParamVars leaf_params(ad::Tape& tape, const Model& m) {
    ParamVars pv;
    for (const auto& [name, mat] : m.params) pv[name] = tape.leaf(mat);
    return pv;
}

namespace {

using ad::Tape;
using ad::Var;

Var linear(Tape& t, const ParamVars& pv, const std::string& name, Var x) {
    return t.add_row_broadcast(t.matmul(x, pv.at(name + ".w")),
                               pv.at(name + ".b"));
}

Var layernorm(Tape& t, const ParamVars& pv, const std::string& name, Var x) {
    return t.layernorm_rows(x, pv.at(name + ".g"), pv.at(name + ".b"));
}

Var mlp(Tape& t, const ParamVars& pv, const std::string& name, Var x) {
    return linear(t, pv, name + ".fc2",
                  t.silu(linear(t, pv, name + ".fc1", x)));
}

/// Multi-head attention with queries from q_in and keys/values from kv_in.
/// When probs_out is given, each head's (n x m) probability matrix is
/// appended to it.
Var attention(Tape& t, const ParamVars& pv, const std::string& name, Var q_in,
              Var kv_in, int heads, std::vector<Var>* probs_out = nullptr) {
    const int d = q_in.cols();
    const int dh = d / heads;
    Var q = t.matmul(q_in, pv.at(name + ".wq"));
    Var k = t.matmul(kv_in, pv.at(name + ".wk"));
    Var v = t.matmul(kv_in, pv.at(name + ".wv"));
    std::vector<Var> head_outs;
    for (int h = 0; h < heads; ++h) {
        Var qh = t.slice_cols(q, h * dh, dh);
        Var kh = t.slice_cols(k, h * dh, dh);
        Var vh = t.slice_cols(v, h * dh, dh);
        Var scores = t.scale(t.matmul(qh, kh, false, true),
                             1.0 / std::sqrt(static_cast<double>(dh)));
        Var probs = t.softmax_rows(scores);
        if (probs_out) probs_out->push_back(probs);
        head_outs.push_back(t.matmul(probs, vh));
    }
    Var cat = t.concat_cols(head_outs);
    return t.matmul(cat, pv.at(name + ".wo"));
}

Var encode_text(Tape& t, const Model& m, const ParamVars& pv,
                const TokenPrompt& prompt) {
    const int n = prompt.length();
    if (n > m.config.max_prompt_len)
        throw std::invalid_argument("prompt longer than max_prompt_len");
    for (int id : prompt.ids)
        if (id < 0 || id >= m.vocab.size())
            throw std::invalid_argument("prompt token id out of vocabulary");
    std::vector<int> pos_ids(n);
    for (int i = 0; i < n; ++i) pos_ids[i] = i;
    Var x = t.add(t.gather_rows(pv.at("tok_embed"), prompt.ids),
                  t.gather_rows(pv.at("text_pos"), pos_ids));
    for (int i = 0; i < m.config.text_blocks; ++i) {
        std::string p = "text" + std::to_string(i);
        Var h = layernorm(t, pv, p + ".ln1", x);
        x = t.add(x, attention(t, pv, p + ".attn", h, h, m.config.heads));
        x = t.add(x, mlp(t, pv, p + ".mlp", layernorm(t, pv, p + ".ln2", x)));
    }
    return layernorm(t, pv, "text_ln", x);
}

Var time_embedding(Tape& t, const Model& m, const ParamVars& pv, int step) {
    const int d = m.config.dim;
    Eigen::MatrixXd feat(1, d);
    for (int k = 0; k < d / 2; ++k) {
        double freq = std::exp(-std::log(10000.0) * k / (d / 2));
        feat(0, 2 * k) = std::sin(step * freq);
        feat(0, 2 * k + 1) = std::cos(step * freq);
    }
    Var f = t.leaf(feat);
    return linear(t, pv, "time.fc2", t.silu(linear(t, pv, "time.fc1", f)));
}

void patchify_indices(const DenoiserConfig& c, std::vector<int>& src_r,
                      std::vector<int>& src_c) {
    const int P = c.latent_resolution, G = c.attention_resolution,
              p = c.patch(), C = c.channels;
    src_r.resize(static_cast<size_t>(G) * G * p * p * C);
    src_c.resize(src_r.size());
    size_t k = 0;
    for (int gy = 0; gy < G; ++gy)
        for (int gx = 0; gx < G; ++gx)
            for (int dy = 0; dy < p; ++dy)
                for (int dx = 0; dx < p; ++dx)
                    for (int ch = 0; ch < C; ++ch, ++k) {
                        src_r[k] = (gy * p + dy) * P + (gx * p + dx);
                        src_c[k] = ch;
                    }
}

void unpatchify_indices(const DenoiserConfig& c, std::vector<int>& src_r,
                        std::vector<int>& src_c) {
    const int P = c.latent_resolution, G = c.attention_resolution,
              p = c.patch(), C = c.channels;
    src_r.resize(static_cast<size_t>(P) * P * C);
    src_c.resize(src_r.size());
    size_t k = 0;
    for (int y = 0; y < P; ++y)
        for (int x = 0; x < P; ++x)
            for (int ch = 0; ch < C; ++ch, ++k) {
                src_r[k] = (y / p) * G + (x / p);
                src_c[k] = ((y % p) * p + (x % p)) * C + ch;
            }
}

}  // namespace

ForwardResult denoiser_forward(ad::Tape& t, const Model& m,
                               const ParamVars& pv, ad::Var z, int step,
                               const TokenPrompt& prompt) {
    const DenoiserConfig& c = m.config;
    const int P = c.latent_resolution, G = c.attention_resolution,
              C = c.channels;
    if (z.rows() != P * P || z.cols() != C)
        throw std::invalid_argument("denoiser_forward: latent shape mismatch");
    if (step < 1 || step > m.schedule.T)
        throw std::invalid_argument("denoiser_forward: t outside [1, T]");

    Var text = encode_text(t, m, pv, prompt);
    // Cross-attention keys/values exclude the terminator: spare attention
    // mass then pools on <sot> (which the probe's re-weighting removes)
    // instead of on <eot>, where it would survive re-weighting and drown
    // out the subject tokens.
    std::vector<int> kv_ids(prompt.length() - 1);
    for (size_t i = 0; i < kv_ids.size(); ++i) kv_ids[i] = static_cast<int>(i);
    Var text_kv = t.gather_rows(text, kv_ids);

    std::vector<int> pr, pc;
    patchify_indices(c, pr, pc);
    Var patches =
        t.gather_elements(z, pr, pc, G * G, c.patch() * c.patch() * C);
    Var x = linear(t, pv, "patch", patches);
    x = t.add(x, pv.at("img_pos"));
    x = t.add_row_broadcast(x, time_embedding(t, m, pv, step));

    ForwardResult res;
    res.attn_resolution = G;
    res.prompt_len = prompt.length() - 1;
    for (int i = 0; i < c.blocks; ++i) {
        std::string p = "blk" + std::to_string(i);
        // Cross-attention first: its queries then see mostly local patch
        // content rather than globally mixed features, which keeps the
        // attention maps sensitive to the latent.
        Var h1 = layernorm(t, pv, p + ".ln1", x);
        std::vector<Var> probs;
        x = t.add(x,
                  attention(t, pv, p + ".cross", h1, text_kv, c.heads, &probs));
        Var h2 = layernorm(t, pv, p + ".ln2", x);
        x = t.add(x, attention(t, pv, p + ".self", h2, h2, c.heads));
        for (int h = 0; h < static_cast<int>(probs.size()); ++h) {
            res.attn.push_back(probs[h]);
            res.attn_ids.emplace_back(i, h);
        }
        x = t.add(x, mlp(t, pv, p + ".mlp", layernorm(t, pv, p + ".ln3", x)));
    }
    Var y = linear(t, pv, "out", layernorm(t, pv, "out.ln", x));
    std::vector<int> ur, uc;
    unpatchify_indices(c, ur, uc);
    res.eps = t.gather_elements(y, ur, uc, P * P, C);
    return res;
}

std::pair<Eigen::MatrixXd, AttentionStack> denoise_step(
    const LatentState& zt, const TokenPrompt& prompt, const Model& m,
    bool capture_attention) {
    ad::Tape tape;
    ParamVars pv = leaf_params(tape, m);
    ad::Var z = tape.leaf(zt.z);
    ForwardResult fr = denoiser_forward(tape, m, pv, z, zt.t, prompt);
    AttentionStack stack;
    if (capture_attention) {
        stack.prompt_len = fr.prompt_len;
        for (size_t i = 0; i < fr.attn.size(); ++i) {
            AttentionMap am;
            am.layer = fr.attn_ids[i].first;
            am.head = fr.attn_ids[i].second;
            am.resolution = fr.attn_resolution;
            am.probs = fr.attn[i].value();
            stack.maps.push_back(std::move(am));
        }
    }
    return {fr.eps.value(), std::move(stack)};
}

Eigen::MatrixXd cfg_combine(const Eigen::MatrixXd& eps_cond,
                            const Eigen::MatrixXd& eps_uncond, double s) {
    if (eps_cond.rows() != eps_uncond.rows() ||
        eps_cond.cols() != eps_uncond.cols())
        throw std::invalid_argument("cfg_combine: shape mismatch");
    return eps_uncond + s * (eps_cond - eps_uncond);
}

double eval_loss(const Model& m, const std::vector<TrainSample>& batch,
                 const std::vector<int>& ts,
                 const std::vector<Eigen::MatrixXd>& noises,
                 const std::vector<bool>& drop_cond) {
    double total = 0.0;
    TokenPrompt uncond = null_prompt(m.vocab);
    for (size_t i = 0; i < batch.size(); ++i) {
        ad::Tape tape;
        ParamVars pv = leaf_params(tape, m);
        double sab = std::sqrt(m.schedule.alpha_bar(ts[i]));
        double snab = std::sqrt(1.0 - m.schedule.alpha_bar(ts[i]));
        Eigen::MatrixXd zt = sab * batch[i].x0 + snab * noises[i];
        ad::Var z = tape.leaf(zt);
        const TokenPrompt& p = drop_cond[i] ? uncond : batch[i].prompt;
        ForwardResult fr = denoiser_forward(tape, m, pv, z, ts[i], p);
        total += tape.mse(fr.eps, noises[i]).value()(0, 0);
    }
    return total / static_cast<double>(batch.size());
}

Model train_denoiser(const std::vector<TrainSample>& dataset,
                     const DenoiserConfig& config, const NoiseSchedule& sched,
                     const Vocabulary& vocab, Rng& rng,
                     const TrainOptions& opts) {
    if (dataset.empty())
        throw std::invalid_argument("train_denoiser: empty dataset");
    if (config.cond_dropout <= 0.0 || config.cond_dropout > 0.3)
        throw std::invalid_argument(
            "train_denoiser: cond_dropout must be in (0, 0.3]");
    for (const TrainSample& s : dataset)
        for (int id : s.prompt.ids)
            if (id < 0 || id >= vocab.size())
                throw std::invalid_argument(
                    "train_denoiser: dataset/vocabulary mismatch");

    Model m = Model::init(config, sched, vocab, rng);

    // Adam state, aligned with the param list.
    std::vector<Eigen::MatrixXd> mom, vel;
    for (const auto& [name, mat] : m.params) {
        mom.push_back(Eigen::MatrixXd::Zero(mat.rows(), mat.cols()));
        vel.push_back(Eigen::MatrixXd::Zero(mat.rows(), mat.cols()));
    }

    std::uniform_int_distribution<int> pick(0, static_cast<int>(dataset.size()) - 1);
    std::uniform_int_distribution<int> pick_t(1, sched.T);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    TokenPrompt uncond = null_prompt(vocab);
    const int P = config.latent_resolution, C = config.channels;

    for (int step = 1; step <= opts.steps; ++step) {
        ad::Tape tape;
        ParamVars pv = leaf_params(tape, m);
        std::vector<ad::Var> losses;
        for (int b = 0; b < opts.batch_size; ++b) {
            const TrainSample& s = dataset[pick(rng)];
            int t_step = pick_t(rng);
            Eigen::MatrixXd noise = random_normal(rng, P * P, C);
            double sab = std::sqrt(sched.alpha_bar(t_step));
            double snab = std::sqrt(1.0 - sched.alpha_bar(t_step));
            ad::Var z = tape.leaf(sab * s.x0 + snab * noise);
            const TokenPrompt& p =
                (u01(rng) < config.cond_dropout) ? uncond : s.prompt;
            ForwardResult fr = denoiser_forward(tape, m, pv, z, t_step, p);
            losses.push_back(tape.mse(fr.eps, noise));
        }
        ad::Var loss = tape.mean_of(losses);
        tape.backward(loss);
        m.loss_trace.push_back(loss.value()(0, 0));

        double bc1 = 1.0 - std::pow(opts.adam_beta1, step);
        double bc2 = 1.0 - std::pow(opts.adam_beta2, step);
        for (size_t i = 0; i < m.params.size(); ++i) {
            const Eigen::MatrixXd& g = pv.at(m.params[i].first).grad();
            mom[i] = opts.adam_beta1 * mom[i] + (1 - opts.adam_beta1) * g;
            vel[i] = opts.adam_beta2 * vel[i] +
                     (1 - opts.adam_beta2) * g.cwiseProduct(g);
            Eigen::MatrixXd mhat = mom[i] / bc1;
            Eigen::MatrixXd vhat = vel[i] / bc2;
            m.params[i].second.array() -=
                opts.lr * mhat.array() / (vhat.array().sqrt() + opts.adam_eps);
        }
        if (opts.verbose && step % opts.log_every == 0)
            std::cerr << "train step " << step << " loss "
                      << m.loss_trace.back() << "\n";
    }
    return m;
}

}  // namespace aex
