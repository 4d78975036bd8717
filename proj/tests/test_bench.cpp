#include "doctest.h"

#include <cmath>
#include <map>

#include "aex/bench.hpp"

using namespace aex;

namespace {

const Vocabulary kVocab = Vocabulary::toy_world();

std::vector<std::string> items12() {
    std::vector<std::string> v;
    for (int i = 0; i < 12; ++i) v.push_back("item" + std::to_string(i));
    return v;
}

/// Hand-set embeddings: texts map to preset unit vectors, images are keyed
/// by their first pixel value. Lets every metric be recomputed by brute
/// force in the test body.
class FixtureBackend : public EmbeddingBackend {
public:
    std::map<std::string, Eigen::VectorXd> texts;
    std::map<double, Eigen::VectorXd> images;
    std::map<double, std::string> captions;

    Eigen::VectorXd embed_text(const std::string& t) const override {
        auto it = texts.find(t);
        if (it == texts.end())
            throw std::invalid_argument("fixture: unknown text " + t);
        return it->second;
    }
    Eigen::VectorXd embed_image(const Image& img) const override {
        return images.at(img.data.at(0));
    }
    bool has_caption() const override { return !captions.empty(); }
    std::string caption(const Image& img) const override {
        return captions.at(img.data.at(0));
    }
};

Eigen::VectorXd unit(std::initializer_list<double> v) {
    Eigen::VectorXd e(static_cast<int>(v.size()));
    int i = 0;
    for (double x : v) e(i++) = x;
    return e.normalized();
}

Image keyed_image(double key) {
    Image img(1, 1, 1);
    img.data[0] = key;
    return img;
}

}  // namespace

TEST_CASE("benchmark counts: C(12,2)=66 pairs, 12x12=144 mixed") {
    std::vector<std::string> colors = {"red", "blue"};
    Rng rng(1);
    BenchmarkSuite ss =
        build_benchmark(items12(), {}, {}, SubsetKind::SubjectSubject, rng);
    CHECK(ss.prompts.size() == 66);
    CHECK(ss.seeds_per_prompt == 64);

    BenchmarkSuite mixed = build_benchmark(
        items12(), items12(), colors, SubsetKind::SubjectColoredObject, rng);
    CHECK(mixed.prompts.size() == 144);

    BenchmarkSuite cc =
        build_benchmark(items12(), {}, colors, SubsetKind::ColoredColored, rng);
    CHECK(cc.prompts.size() == 66);

    Rng r2(5);
    BenchmarkSuite two =
        build_benchmark({"cat", "dog"}, {}, {}, SubsetKind::SubjectSubject, r2);
    REQUIRE(two.prompts.size() == 1);
    CHECK(two.prompts[0].text == "a cat and a dog");
    CHECK(two.prompts[0].sub_a == "a cat");
    CHECK(two.prompts[0].sub_b == "a dog");

    SUBCASE("deterministic per seed") {
        Rng ra(7), rb(7);
        BenchmarkSuite x = build_benchmark(items12(), {}, colors,
                                           SubsetKind::ColoredColored, ra);
        BenchmarkSuite y = build_benchmark(items12(), {}, colors,
                                           SubsetKind::ColoredColored, rb);
        for (size_t i = 0; i < x.prompts.size(); ++i)
            CHECK(x.prompts[i].text == y.prompts[i].text);
    }
    SUBCASE("duplicate items rejected") {
        Rng r(1);
        CHECK_THROWS_AS(build_benchmark({"cat", "cat"}, {}, {},
                                        SubsetKind::SubjectSubject, r),
                        std::invalid_argument);
    }
    SUBCASE("colored kinds need colors") {
        Rng r(1);
        CHECK_THROWS_AS(build_benchmark(items12(), {}, {},
                                        SubsetKind::ColoredColored, r),
                        std::invalid_argument);
    }
    SUBCASE("kind names round-trip") {
        for (SubsetKind k : {SubsetKind::SubjectSubject,
                             SubsetKind::SubjectColoredObject,
                             SubsetKind::ColoredColored})
            CHECK(subset_kind_from_name(subset_kind_name(k)) == k);
        CHECK_THROWS_AS(subset_kind_from_name("nope"), std::invalid_argument);
    }
}

TEST_CASE("prompt splitter handles the three templates only") {
    auto [a, b] = split_prompt(kVocab, "a red circle and a square");
    CHECK(a == "a red circle");
    CHECK(b == "a square");
    auto [c, d] = split_prompt(kVocab, "a circle and a square");
    CHECK(c == "a circle");
    CHECK(d == "a square");
    auto [e, f] = split_prompt(kVocab, "a red circle and a blue square");
    CHECK(f == "a blue square");

    CHECK_THROWS_AS(split_prompt(kVocab, "a red circle"),
                    std::invalid_argument);
    CHECK_THROWS_AS(split_prompt(kVocab, "a circle and a square please"),
                    std::invalid_argument);
    CHECK_THROWS_AS(split_prompt(kVocab, "a zebra and a square"),
                    std::invalid_argument);
}

TEST_CASE("template averaging: identity, dedup invariance, unit norm") {
    FixtureBackend be;
    be.texts["x"] = unit({1, 0, 0});
    be.texts["a photo of x"] = unit({0, 1, 0});

    Eigen::VectorXd plain = template_embed_text("x", be, {"{}"});
    CHECK((plain - be.texts["x"]).norm() < 1e-12);

    Eigen::VectorXd dup =
        template_embed_text("x", be, {"{}", "a photo of {}", "{}",
                                      "a photo of {}"});
    Eigen::VectorXd dedup = template_embed_text("x", be, {"{}", "a photo of {}"});
    CHECK((dup - dedup).norm() < 1e-12);
    CHECK(std::abs(dup.norm() - 1.0) < 1e-6);

    CHECK_THROWS_AS(template_embed_text("x", be, {}), std::invalid_argument);
    CHECK_THROWS_AS(template_embed_text("x", be, {"no placeholder"}),
                    std::invalid_argument);
    SUBCASE("non-unit backend vector rejected") {
        be.texts["x"] = 2.0 * unit({1, 0, 0});
        CHECK_THROWS_AS(template_embed_text("x", be, {"{}"}),
                        std::runtime_error);
    }
}

TEST_CASE("similarity metrics equal a brute-force oracle on fixtures") {
    FixtureBackend be;
    const std::vector<std::string> tmpl = {"{}"};
    be.texts["a cat and a dog"] = unit({1, 1, 0, 0});
    be.texts["a cat"] = unit({1, 0, 0, 0});
    be.texts["a dog"] = unit({0, 1, 0, 0});
    be.images[0.1] = unit({1, 0, 0, 0});
    be.images[0.2] = unit({1, 2, 0, 1});
    be.images[0.3] = unit({0, 0, 1, 0});
    std::vector<Image> imgs = {keyed_image(0.1), keyed_image(0.2),
                               keyed_image(0.3)};
    BenchPrompt bp{"a cat and a dog", "a cat", "a dog"};

    // Brute-force oracle: plain dot products, re-derived here.
    double full_oracle = 0, min_oracle = 0, max_oracle = 0;
    Eigen::VectorXd p = be.texts["a cat and a dog"];
    Eigen::VectorXd va = be.texts["a cat"], vb = be.texts["a dog"];
    for (double k : {0.1, 0.2, 0.3}) {
        const Eigen::VectorXd& e = be.images[k];
        full_oracle += p.dot(e);
        min_oracle += std::min(va.dot(e), vb.dot(e));
        max_oracle += std::max(va.dot(e), vb.dot(e));
    }
    full_oracle /= 3;
    min_oracle /= 3;
    max_oracle /= 3;

    CHECK(full_prompt_similarity(imgs, bp.text, be, tmpl) ==
          doctest::Approx(full_oracle).epsilon(1e-9));
    CHECK(min_object_similarity(imgs, bp, be, tmpl) ==
          doctest::Approx(min_oracle).epsilon(1e-9));
    CHECK(max_object_similarity(imgs, bp, be, tmpl) ==
          doctest::Approx(max_oracle).epsilon(1e-9));
    CHECK(min_object_similarity(imgs, bp, be, tmpl) <=
          max_object_similarity(imgs, bp, be, tmpl));

    SUBCASE("permutation invariance") {
        std::vector<Image> shuffled = {imgs[2], imgs[0], imgs[1]};
        CHECK(full_prompt_similarity(shuffled, bp.text, be, tmpl) ==
              doctest::Approx(full_prompt_similarity(imgs, bp.text, be, tmpl))
                  .epsilon(1e-12));
        CHECK(min_object_similarity(shuffled, bp, be, tmpl) ==
              doctest::Approx(min_object_similarity(imgs, bp, be, tmpl))
                  .epsilon(1e-12));
    }
    SUBCASE("trivial endpoints") {
        std::vector<Image> aligned = {keyed_image(0.1)};
        CHECK(max_object_similarity(aligned, bp, be, tmpl) ==
              doctest::Approx(1.0).epsilon(1e-12));
        CHECK(min_object_similarity(aligned, bp, be, tmpl) ==
              doctest::Approx(0.0).epsilon(1e-12));
        std::vector<Image> ortho = {keyed_image(0.3)};
        CHECK(full_prompt_similarity(ortho, bp.text, be, tmpl) ==
              doctest::Approx(0.0).epsilon(1e-12));
    }
    SUBCASE("empty image set rejected") {
        CHECK_THROWS_AS(full_prompt_similarity({}, bp.text, be, tmpl),
                        std::invalid_argument);
        CHECK_THROWS_AS(min_object_similarity({}, bp, be, tmpl),
                        std::invalid_argument);
    }
}

TEST_CASE("upper bound and text-text similarity on fixtures") {
    FixtureBackend be;
    const std::vector<std::string> tmpl = {"{}"};
    be.texts["a cat"] = unit({1, 0, 0});
    be.texts["a dog"] = unit({0, 1, 0});
    be.images[0.1] = unit({1, 0, 0});
    be.images[0.2] = unit({1, 1, 0});

    std::vector<SubjectReferences> refs = {
        {"a cat", {keyed_image(0.1), keyed_image(0.2)}},
        {"a dog", {keyed_image(0.2)}}};
    double oracle = ((1.0 + 1.0 / std::sqrt(2.0)) / 2.0 +
                     1.0 / std::sqrt(2.0)) /
                    2.0;
    CHECK(aex::upper_bound(refs, be, tmpl) == doctest::Approx(oracle).epsilon(1e-9));
    CHECK(aex::upper_bound({{"a cat", {keyed_image(0.1)}}}, be, tmpl) ==
          doctest::Approx(1.0));
    CHECK_THROWS_AS(aex::upper_bound({{"a cat", {}}}, be, tmpl),
                    std::invalid_argument);
    CHECK_THROWS_AS(aex::upper_bound({}, be, tmpl), std::invalid_argument);

    SUBCASE("text-text uses captions") {
        be.texts["a cat and a dog"] = unit({1, 1, 0});
        be.captions[0.1] = "a cat";
        be.captions[0.2] = "a cat and a dog";
        std::vector<Image> imgs = {keyed_image(0.1), keyed_image(0.2)};
        double tt_oracle =
            (be.texts["a cat and a dog"].dot(be.texts["a cat"]) + 1.0) / 2.0;
        CHECK(text_text_similarity(imgs, "a cat and a dog", be, tmpl) ==
              doctest::Approx(tt_oracle).epsilon(1e-9));
    }
    SUBCASE("captionless backend rejected") {
        CHECK_THROWS_AS(
            text_text_similarity({keyed_image(0.1)}, "a cat", be, tmpl),
            std::invalid_argument);
    }
}

TEST_CASE("black-image sentinel and exclusion counting") {
    Image black(4, 4, 3);
    for (double& v : black.data) v = -1.0;
    Image scene(4, 4, 3);
    for (double& v : scene.data) v = -0.85;
    CHECK(is_black_image(black));
    CHECK_FALSE(is_black_image(scene));

    ExclusionResult r = exclude_images({black, scene, black});
    CHECK(r.excluded == 2);
    REQUIRE(r.kept.size() == 1);

    ExclusionResult all = exclude_images(
        {black, scene}, [](const Image&) { return true; });
    CHECK(all.excluded == 2);
    CHECK(all.kept.empty());
}

TEST_CASE("neglect rate counts runs with a missing subject") {
    TokenPrompt prompt = encode_prompt(kVocab, "a red circle and a blue square");
    auto make = [&](bool both, bool swap_colors) {
        SceneSpec spec;
        Entity c;
        c.shape_id = kVocab.id_of("circle");
        c.color_id = kVocab.id_of(swap_colors ? "blue" : "red");
        c.cx = 0.3;
        c.cy = 0.3;
        c.radius = 0.16;
        spec.entities.push_back(c);
        if (both) {
            Entity s;
            s.shape_id = kVocab.id_of("square");
            s.color_id = kVocab.id_of(swap_colors ? "red" : "blue");
            s.cx = 0.72;
            s.cy = 0.72;
            s.radius = 0.15;
            spec.entities.push_back(s);
        }
        return render_scene(kVocab, spec, {32, 0.1});
    };
    std::vector<Image> imgs = {make(true, false), make(true, false),
                               make(false, false), make(true, true)};
    std::vector<TokenPrompt> prompts(4, prompt);
    NeglectStats st = neglect_rate(imgs, prompts, kVocab);
    CHECK(st.runs == 4);
    CHECK(st.neglected == 1);
    CHECK(st.neglect_rate == doctest::Approx(0.25));
    CHECK(st.binding_errors == 1);
    CHECK(st.binding_error_rate == doctest::Approx(0.25));

    CHECK_THROWS_AS(neglect_rate(imgs, {prompt}, kVocab),
                    std::invalid_argument);
}

TEST_CASE("oracle backend: indicator geometry on rendered scenes") {
    auto be = oracle_backend(kVocab);
    const std::vector<std::string> tmpl = default_templates();

    SceneSpec spec;
    Entity c;
    c.shape_id = kVocab.id_of("circle");
    c.color_id = kVocab.id_of("red");
    c.cx = 0.5;
    c.cy = 0.5;
    c.radius = 0.2;
    spec.entities.push_back(c);
    Image red_circle = render_scene(kVocab, spec, {32, 0.1});

    SUBCASE("perfect rendering scores cosine 1") {
        Eigen::VectorXd t = be->embed_text("a red circle");
        Eigen::VectorXd i = be->embed_image(red_circle);
        CHECK(t.dot(i) == doctest::Approx(1.0).epsilon(1e-9));
        // Template wrappers leave the concept vector unchanged, so the
        // full-prompt metric is exactly 1 too.
        CHECK(full_prompt_similarity({red_circle}, "a red circle", *be,
                                     tmpl) == doctest::Approx(1.0).epsilon(1e-9));
    }
    SUBCASE("missing subject: full < 1 and min-object picks 0") {
        BenchPrompt bp{"a red circle and a blue square", "a red circle",
                       "a blue square"};
        CHECK(full_prompt_similarity({red_circle}, bp.text, *be, tmpl) <
              1.0 - 1e-9);
        CHECK(min_object_similarity({red_circle}, bp, *be, tmpl) ==
              doctest::Approx(0.0).epsilon(1e-12));
        CHECK(max_object_similarity({red_circle}, bp, *be, tmpl) ==
              doctest::Approx(1.0).epsilon(1e-9));
    }
    SUBCASE("unrelated prompts embed orthogonally") {
        CHECK(be->embed_text("a red circle")
                  .dot(be->embed_text("a blue square")) ==
              doctest::Approx(0.0).epsilon(1e-12));
    }
    SUBCASE("caption round-trips to text-text similarity 1") {
        CHECK(be->caption(red_circle) == "a red circle");
        CHECK(text_text_similarity({red_circle}, "a red circle", *be,
                                   tmpl) == doctest::Approx(1.0).epsilon(1e-9));
    }
    SUBCASE("empty scene embeds off every prompt axis") {
        Image bg = render_scene(kVocab, SceneSpec{}, {32, 0.1});
        Eigen::VectorXd e = be->embed_image(bg);
        CHECK(std::abs(e.norm() - 1.0) < 1e-9);
        CHECK(e.dot(be->embed_text("a red circle")) ==
              doctest::Approx(0.0).epsilon(1e-12));
        CHECK(be->caption(bg) == "an empty scene");
    }
    SUBCASE("unparseable prompt rejected") {
        CHECK_THROWS_AS(be->embed_text("nothing relevant here"),
                        std::invalid_argument);
    }
}

TEST_CASE("paired t-test matches reference statistics") {
    PairedTest t1 = paired_ttest({1, 2, 3, 4, 5}, {0, 0, 0, 0, 0});
    CHECK(t1.t == doctest::Approx(4.242640687).epsilon(1e-9));
    CHECK(t1.df == 4);
    CHECK(t1.p_two_sided == doctest::Approx(0.0132355996).epsilon(1e-6));

    PairedTest t2 = paired_ttest({0.3, 0.5, 0.1, 0.4, 0.2, 0.6},
                                 {0.25, 0.45, 0.2, 0.35, 0.1, 0.55});
    CHECK(t2.t == doctest::Approx(1.1952286093).epsilon(1e-9));
    CHECK(t2.p_two_sided == doctest::Approx(0.2855909406).epsilon(1e-6));

    SUBCASE("antisymmetry and degenerate cases") {
        PairedTest fwd = paired_ttest({1, 2, 3}, {3, 2, 2});
        PairedTest rev = paired_ttest({3, 2, 2}, {1, 2, 3});
        CHECK(fwd.t == doctest::Approx(-rev.t));
        CHECK(fwd.p_two_sided == doctest::Approx(rev.p_two_sided));

        PairedTest same = paired_ttest({1, 2, 3}, {1, 2, 3});
        CHECK(same.p_two_sided == 1.0);
        PairedTest shift = paired_ttest({2, 3, 4}, {1, 2, 3});
        CHECK(shift.p_two_sided == 0.0);

        CHECK_THROWS_AS(paired_ttest({1}, {2}), std::invalid_argument);
        CHECK_THROWS_AS(paired_ttest({1, 2}, {1}), std::invalid_argument);
    }
}
