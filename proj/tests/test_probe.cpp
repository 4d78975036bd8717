#include "doctest.h"

#include <cmath>

#include "aex/gsn.hpp"
#include "aex/probe.hpp"

using namespace aex;
using ad::Mat;
using ad::Tape;
using ad::Var;

namespace {

AttentionStack random_stack(Rng& rng, int G, int N, int maps) {
    AttentionStack st;
    st.prompt_len = N;
    for (int i = 0; i < maps; ++i) {
        Tape t;
        AttentionMap am;
        am.layer = i / 2;
        am.head = i % 2;
        am.resolution = G;
        am.probs = t.softmax_rows(t.leaf(random_normal(rng, G * G, N))).value();
        st.maps.push_back(std::move(am));
    }
    return st;
}

}  // namespace

TEST_CASE("gaussian kernel: frozen 3x3 sigma=0.5 weights") {
    Mat k = SmoothingKernel{3, 0.5}.matrix();
    REQUIRE(k.rows() == 3);
    CHECK(k.sum() == doctest::Approx(1.0).epsilon(1e-12));
    // exp(0), exp(-2), exp(-4) normalized.
    CHECK(k(1, 1) == doctest::Approx(0.619347).epsilon(1e-5));
    CHECK(k(0, 1) == doctest::Approx(0.083822).epsilon(1e-4));
    CHECK(k(0, 0) == doctest::Approx(0.011344).epsilon(1e-3));
    CHECK(k(0, 1) == k(2, 1));
    CHECK(k(1, 0) == k(1, 2));

    SUBCASE("size 1 is the identity") {
        Mat k1 = SmoothingKernel{1, 0.5}.matrix();
        CHECK(k1.rows() == 1);
        CHECK(k1(0, 0) == 1.0);
        Rng rng(4);
        Mat m = random_normal(rng, 5, 5);
        CHECK((gaussian_smooth(m, {1, 0.5}) - m).norm() == 0.0);
    }
    SUBCASE("even size rejected") {
        CHECK_THROWS_AS(SmoothingKernel({4, 0.5}).matrix(),
                        std::invalid_argument);
        CHECK_THROWS_AS(SmoothingKernel({3, 0.0}).matrix(),
                        std::invalid_argument);
    }
}

TEST_CASE("interior impulse smoothed to the frozen kernel values") {
    Mat m = Mat::Zero(8, 8);
    m(4, 4) = 1.0;
    Mat sm = gaussian_smooth(m, {3, 0.5});
    CHECK(sm(4, 4) == doctest::Approx(0.6193).epsilon(1e-3));
    CHECK(sm(4, 3) == doctest::Approx(0.0838).epsilon(1e-2));
    CHECK(sm(3, 3) == doctest::Approx(0.0113).epsilon(1e-1));
    CHECK(sm.sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("aggregation averages maps at the target resolution") {
    Rng rng(7);
    AttentionStack st = random_stack(rng, 4, 5, 4);
    AggregatedAttention agg = aggregate_attention(st, 4);
    Mat expect = Mat::Zero(16, 5);
    for (const AttentionMap& am : st.maps) expect += am.probs;
    expect /= 4.0;
    CHECK((agg.A - expect).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(agg.resolution == 4);
    CHECK_FALSE(agg.sot_excluded);

    SUBCASE("no map at the target resolution") {
        CHECK_THROWS_AS(aggregate_attention(st, 8), std::invalid_argument);
    }
    SUBCASE("tape variant agrees") {
        Tape t;
        std::vector<Var> vars;
        std::vector<int> res;
        for (const AttentionMap& am : st.maps) {
            vars.push_back(t.leaf(am.probs));
            res.push_back(am.resolution);
        }
        Var a = aggregate_attention(t, vars, res, 4);
        CHECK((a.value() - agg.A).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("re-weighting drops <sot> and renormalizes") {
    Rng rng(11);
    for (int trial = 0; trial < 1000; ++trial) {
        Tape t;
        Mat a = t.softmax_rows(t.leaf(random_normal(rng, 9, 6))).value();
        AggregatedAttention agg;
        agg.A = a;
        agg.resolution = 3;
        AggregatedAttention rw =
            reweight_without_sot(agg, SoftmaxMode::ValueLogits);
        REQUIRE(rw.A.cols() == 5);
        CHECK(rw.sot_excluded);
        for (int r = 0; r < rw.A.rows(); ++r) {
            CHECK(rw.A.row(r).sum() == doctest::Approx(1.0).epsilon(1e-9));
            CHECK(rw.A.row(r).minCoeff() >= 0.0);
        }
    }
}

TEST_CASE("LogProbs mode equals plain renormalization of the tail") {
    Rng rng(13);
    Tape t;
    Mat a = t.softmax_rows(t.leaf(random_normal(rng, 16, 7))).value();
    AggregatedAttention agg;
    agg.A = a;
    agg.resolution = 4;
    AggregatedAttention rw = reweight_without_sot(agg, SoftmaxMode::LogProbs);
    // softmax(log p) renormalizes p; oracle computed directly.
    for (int r = 0; r < 16; ++r) {
        Eigen::RowVectorXd tail = a.row(r).tail(6);
        tail /= tail.sum();
        CHECK((rw.A.row(r) - tail).cwiseAbs().maxCoeff() < 1e-9);
    }

    SUBCASE("double re-weighting rejected") {
        CHECK_THROWS_AS(reweight_without_sot(rw, SoftmaxMode::LogProbs),
                        std::invalid_argument);
    }
}

TEST_CASE("subject_map reshapes one token column; <sot> rejected") {
    Rng rng(17);
    Tape t;
    Mat a = t.softmax_rows(t.leaf(random_normal(rng, 16, 5))).value();
    AggregatedAttention agg;
    agg.A = a;
    agg.resolution = 4;
    AggregatedAttention rw = reweight_without_sot(agg, SoftmaxMode::ValueLogits);

    Mat m = subject_map(rw, 2);
    REQUIRE(m.rows() == 4);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) CHECK(m(y, x) == rw.A(y * 4 + x, 1));

    CHECK_THROWS_AS(subject_map(rw, 0), std::invalid_argument);
    CHECK_THROWS_AS(subject_map(rw, 9), std::invalid_argument);

    SUBCASE("tape variant agrees with the off-tape one") {
        Tape t2;
        Var rwv = reweight_without_sot(t2, t2.leaf(a),
                                       SoftmaxMode::ValueLogits);
        Var mv = subject_map(t2, rwv, 2, 4);
        CHECK((mv.value() - m).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("dominant token is the largest column mass, ties to lowest") {
    AggregatedAttention a;
    a.resolution = 2;
    a.sot_excluded = true;
    a.A = Mat(4, 3);
    a.A << 0.2, 0.5, 0.3,  //
        0.2, 0.5, 0.3,     //
        0.6, 0.1, 0.3,     //
        0.6, 0.1, 0.3;
    CHECK(select_dominant_token(a, {1, 2, 3}) == 1);   // col masses 1.6, 1.2, 1.2
    CHECK(select_dominant_token(a, {2, 3}) == 2);      // tie -> lowest
    CHECK_THROWS_AS(select_dominant_token(a, {}), std::invalid_argument);
    CHECK_THROWS_AS(select_dominant_token(a, {7}), std::invalid_argument);
}

TEST_CASE("gradient of max(smooth(subject_map)) matches finite differences") {
    Rng rng(23);
    Mat logits0 = random_normal(rng, 16, 5);
    SmoothingKernel kernel{3, 0.5};

    auto value = [&](const Mat& logits, int subject) {
        Tape t;
        Var a = t.softmax_rows(t.leaf(logits));
        Var rw = reweight_without_sot(t, a, SoftmaxMode::ValueLogits);
        auto losses = compute_subject_losses(t, rw, 4, {subject}, kernel);
        return losses[0].value()(0, 0);
    };

    Tape t;
    Var x = t.leaf(logits0);
    Var a = t.softmax_rows(x);
    Var rw = reweight_without_sot(t, a, SoftmaxMode::ValueLogits);
    auto losses = compute_subject_losses(t, rw, 4, {2}, kernel);
    int arg = -1;
    Var loss = compute_loss(t, losses, &arg);
    CHECK(arg == 0);
    t.backward(loss);
    Mat g = x.grad();

    const double h = 1e-6;
    for (int r = 0; r < 16; ++r)
        for (int c = 0; c < 5; ++c) {
            Mat lp = logits0, lm = logits0;
            lp(r, c) += h;
            lm(r, c) -= h;
            double fd = (value(lp, 2) - value(lm, 2)) / (2 * h);
            CHECK(g(r, c) == doctest::Approx(fd).epsilon(1e-4).scale(1.0));
        }
}
