#include "doctest.h"

#include <cmath>

#include "aex/gsn.hpp"
#include "aex/model.hpp"
#include "aex/world.hpp"

using namespace aex;

namespace {

const Vocabulary kVocab = Vocabulary::toy_world();

DenoiserConfig small_config() {
    DenoiserConfig c;
    c.latent_resolution = 16;
    c.attention_resolution = 8;
    c.dim = 16;
    c.heads = 2;
    c.blocks = 1;
    c.text_blocks = 1;
    return c;
}

Model small_model(uint64_t seed = 11) {
    Rng rng(seed);
    return Model::init(small_config(), NoiseSchedule::linear(10), kVocab, rng);
}

std::vector<TrainSample> make_dataset(int n, uint64_t seed,
                                      double drop_fraction = 0.0,
                                      int resolution = 16) {
    SceneSamplerOptions opts;
    opts.bias.drop_fraction = drop_fraction;
    opts.render.resolution = resolution;
    Rng rng(seed);
    std::vector<TrainSample> ds;
    for (int i = 0; i < n; ++i) {
        SceneSample s = sample_scene(kVocab, rng, opts);
        TrainSample ts;
        ts.x0 = image_to_latent(render_scene(kVocab, s.spec, opts.render));
        ts.prompt = s.prompt;
        ds.push_back(std::move(ts));
    }
    return ds;
}

}  // namespace

TEST_CASE("noise schedule: beta nondecreasing, alpha_bar decreasing") {
    NoiseSchedule s = NoiseSchedule::linear(50);
    CHECK(s.T == 50);
    CHECK(s.alpha_bar(0) == 1.0);
    for (int t = 1; t <= 50; ++t) {
        CHECK(s.beta(t) > 0.0);
        if (t > 1) CHECK(s.beta(t) >= s.beta(t - 1));
        CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
    }
    CHECK(s.alpha_bar(50) < 0.05);
}

TEST_CASE("cfg_combine algebra") {
    Rng rng(3);
    Eigen::MatrixXd c = random_normal(rng, 4, 3), u = random_normal(rng, 4, 3);
    CHECK((cfg_combine(c, u, 1.0) - c).norm() < 1e-14);
    CHECK((cfg_combine(c, u, 0.0) - u).norm() == 0.0);
    CHECK((cfg_combine(c, c, 7.5) - c).norm() == 0.0);
    // Affine in s: midpoint of s=2 and s=4 equals s=3.
    Eigen::MatrixXd mid = 0.5 * (cfg_combine(c, u, 2.0) + cfg_combine(c, u, 4.0));
    CHECK((mid - cfg_combine(c, u, 3.0)).norm() < 1e-12);
}

TEST_CASE("scheduler_step recovers the closed-form posterior mean") {
    NoiseSchedule s = NoiseSchedule::linear(10);
    Rng rng(5);
    Eigen::MatrixXd x0 = random_normal(rng, 9, 3);
    Eigen::MatrixXd eps = random_normal(rng, 9, 3);
    int t = 6;
    Eigen::MatrixXd zt = std::sqrt(s.alpha_bar(t)) * x0 +
                         std::sqrt(1 - s.alpha_bar(t)) * eps;
    Rng r2(0);
    Eigen::MatrixXd got =
        scheduler_step(zt, eps, t, s, SamplerVariant::Deterministic, r2);
    // Independent oracle: q(z_{t-1} | z_t, x0) mean straight from the
    // schedule definition.
    double ab = s.alpha_bar(t), abp = s.alpha_bar(t - 1), b = s.beta(t);
    Eigen::MatrixXd oracle = (std::sqrt(abp) * b * x0 +
                              std::sqrt(1 - b) * (1 - abp) * zt) /
                             (1 - ab);
    CHECK((got - oracle).cwiseAbs().maxCoeff() < 1e-6);

    SUBCASE("zero eps scales z by the analytic coefficient") {
        Rng r3(0);
        Eigen::MatrixXd z2 = scheduler_step(zt, Eigen::MatrixXd::Zero(9, 3), t,
                                            s, SamplerVariant::Deterministic, r3);
        double coeff = std::sqrt(abp) * b / (std::sqrt(ab) * (1 - ab)) +
                       std::sqrt(1 - b) * (1 - abp) / (1 - ab);
        CHECK((z2 - coeff * zt).cwiseAbs().maxCoeff() < 1e-9);
    }
    SUBCASE("stochastic variant is seed-reproducible") {
        Rng a(42), b2(42);
        Eigen::MatrixXd za =
            scheduler_step(zt, eps, t, s, SamplerVariant::Stochastic, a);
        Eigen::MatrixXd zb =
            scheduler_step(zt, eps, t, s, SamplerVariant::Stochastic, b2);
        CHECK((za - zb).norm() == 0.0);
    }
    SUBCASE("t = 0 is rejected") {
        Rng r4(0);
        CHECK_THROWS_AS(
            scheduler_step(zt, eps, 0, s, SamplerVariant::Deterministic, r4),
            std::invalid_argument);
    }
}

TEST_CASE("denoise_step basics") {
    Model m = small_model();
    Rng rng(7);
    LatentState z{random_normal(rng, 16 * 16, 3), 16, 4};
    TokenPrompt prompt = encode_prompt(kVocab, "a red circle and a square");

    SUBCASE("null prompt equals the unconditional branch") {
        auto [eps_null, st] = denoise_step(z, null_prompt(kVocab), m, false);
        auto [eps_uncond, st2] = denoise_step(z, null_prompt(kVocab), m, false);
        CHECK((eps_null - eps_uncond).norm() == 0.0);
    }
    SUBCASE("attention rows are distributions") {
        auto [eps, stack] = denoise_step(z, prompt, m, true);
        REQUIRE(!stack.maps.empty());
        // the terminator is masked out of the cross-attention keys
        CHECK(stack.prompt_len == prompt.length() - 1);
        for (const AttentionMap& am : stack.maps) {
            CHECK(am.probs.cols() == prompt.length() - 1);
            for (int r = 0; r < am.probs.rows(); ++r)
                CHECK(am.probs.row(r).sum() ==
                      doctest::Approx(1.0).epsilon(1e-6));
        }
    }
    SUBCASE("shape mismatch rejected") {
        LatentState bad{random_normal(rng, 8 * 8, 3), 8, 4};
        CHECK_THROWS_AS(denoise_step(bad, prompt, m, false),
                        std::invalid_argument);
    }
    SUBCASE("deterministic forward") {
        auto a = denoise_step(z, prompt, m, false).first;
        auto b = denoise_step(z, prompt, m, false).first;
        CHECK((a - b).norm() == 0.0);
    }
}

TEST_CASE("attention-derived scalar gradient matches finite differences") {
    Model m = small_model();
    Rng rng(13);
    Eigen::MatrixXd z0 = random_normal(rng, 16 * 16, 3);
    TokenPrompt prompt = encode_prompt(kVocab, "a blue ring");

    auto f = [&](const Eigen::MatrixXd& zv) {
        ad::Tape tape;
        ParamVars pv = leaf_params(tape, m);
        ad::Var z = tape.leaf(zv);
        ForwardResult fr = denoiser_forward(tape, m, pv, z, 3, prompt);
        return tape.sum_all(tape.cmul(fr.attn[0], fr.attn[0])).value()(0, 0);
    };

    ad::Tape tape;
    ParamVars pv = leaf_params(tape, m);
    ad::Var z = tape.leaf(z0);
    ForwardResult fr = denoiser_forward(tape, m, pv, z, 3, prompt);
    ad::Var s = tape.sum_all(tape.cmul(fr.attn[0], fr.attn[0]));
    tape.backward(s);
    Eigen::MatrixXd g = z.grad();

    Rng coord_rng(99);
    std::uniform_int_distribution<int> pr(0, 16 * 16 - 1), pc(0, 2);
    const double h = 1e-4;
    for (int k = 0; k < 12; ++k) {
        int r = pr(coord_rng), c = pc(coord_rng);
        Eigen::MatrixXd zp = z0, zm = z0;
        zp(r, c) += h;
        zm(r, c) -= h;
        double fd = (f(zp) - f(zm)) / (2 * h);
        double denom = std::max(std::abs(fd), 1e-8);
        CHECK(std::abs(g(r, c) - fd) / denom < 1e-3);
    }
}

TEST_CASE("training loss: determinism and untrained Monte-Carlo baseline") {
    Model m = small_model();
    auto ds = make_dataset(8, 21);
    std::vector<int> ts;
    std::vector<Eigen::MatrixXd> noises;
    std::vector<bool> drop;
    Rng rng(31);
    std::uniform_int_distribution<int> pick_t(1, m.schedule.T);
    for (size_t i = 0; i < ds.size(); ++i) {
        ts.push_back(pick_t(rng));
        noises.push_back(random_normal(rng, 16 * 16, 3));
        drop.push_back(i % 4 == 0);
    }
    double l1 = eval_loss(m, ds, ts, noises, drop);
    double l2 = eval_loss(m, ds, ts, noises, drop);
    CHECK(l1 == l2);

    // The output head is zero-initialized, so the untrained model predicts
    // zero noise and the expected per-element loss is E[eps^2] = 1.
    // Monte-Carlo oracle over >= 1e4 standard-normal draws.
    Rng mc(77);
    double acc = 0.0;
    const int draws = 20000;
    std::normal_distribution<double> nd(0.0, 1.0);
    for (int i = 0; i < draws; ++i) {
        double e = nd(mc);
        acc += e * e;
    }
    double oracle = acc / draws;
    CHECK(l1 == doctest::Approx(oracle).epsilon(0.05));
}

TEST_CASE("short training run beats the untrained baseline") {
    auto ds = make_dataset(64, 5);
    DenoiserConfig c = small_config();
    NoiseSchedule sched = NoiseSchedule::linear(10);
    TrainOptions topt;
    topt.steps = 60;
    topt.batch_size = 8;

    // Fixed validation batch evaluated on both models.
    std::vector<int> ts;
    std::vector<Eigen::MatrixXd> noises;
    std::vector<bool> drop;
    std::vector<TrainSample> val(ds.begin(), ds.begin() + 16);
    Rng vr(9);
    std::uniform_int_distribution<int> pick_t(1, sched.T);
    for (size_t i = 0; i < val.size(); ++i) {
        ts.push_back(pick_t(vr));
        noises.push_back(random_normal(vr, 16 * 16, 3));
        drop.push_back(false);
    }

    Rng r0(123);
    Model untrained = Model::init(c, sched, kVocab, r0);
    double base = eval_loss(untrained, val, ts, noises, drop);

    Rng r1(123);
    Model trained = train_denoiser(ds, c, sched, kVocab, r1, topt);
    double after = eval_loss(trained, val, ts, noises, drop);
    CHECK(after < base);
    CHECK(trained.loss_trace.size() == 60);
}

TEST_CASE("train_denoiser rejects vocabulary mismatch and bad dropout") {
    auto ds = make_dataset(4, 1);
    DenoiserConfig c = small_config();
    NoiseSchedule sched = NoiseSchedule::linear(10);
    Rng rng(2);

    SUBCASE("dataset token outside vocabulary") {
        Vocabulary tiny = kVocab;
        tiny.tokens.resize(6);  // truncate: dataset ids exceed this
        CHECK_THROWS_AS(
            train_denoiser(ds, c, sched, tiny, rng, TrainOptions{}),
            std::invalid_argument);
    }
    SUBCASE("dropout outside (0, 0.3]") {
        c.cond_dropout = 0.0;
        CHECK_THROWS_AS(train_denoiser(ds, c, sched, kVocab, rng, TrainOptions{}),
                        std::invalid_argument);
    }
}

TEST_CASE("sample: determinism and trajectory length") {
    Model m = small_model();
    TokenPrompt prompt = encode_prompt(kVocab, "a circle and a square");
    auto [img1, rec1] = sample(m, prompt, 42, nullptr);
    auto [img2, rec2] = sample(m, prompt, 42, nullptr);
    CHECK(img1.data == img2.data);
    CHECK(static_cast<int>(rec1.steps.size()) == m.schedule.T);
    for (double v : img1.data) {
        CHECK(v >= -1.0);
        CHECK(v <= 1.0);
    }
    SUBCASE("subject index out of range rejected") {
        TokenPrompt bad = prompt;
        bad.subject_indices.push_back(bad.length() + 3);
        CHECK_THROWS_AS(sample(m, bad, 1, nullptr), std::invalid_argument);
    }
}
