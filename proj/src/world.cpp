#include "aex/world.hpp"

#include <cmath>
#include <map>

namespace aex {

std::array<double, 3> background_color() { return {-0.85, -0.85, -0.85}; }

std::array<double, 3> color_value(const Vocabulary& vocab, int color_id) {
    static const std::map<std::string, std::array<double, 3>> palette = {
        {"red", {1.0, -1.0, -1.0}},   {"orange", {1.0, 0.2, -1.0}},
        {"yellow", {1.0, 1.0, -1.0}}, {"green", {-1.0, 1.0, -1.0}},
        {"blue", {-1.0, -1.0, 1.0}},  {"purple", {0.2, -1.0, 1.0}},
        {"pink", {1.0, 0.2, 0.6}},    {"white", {1.0, 1.0, 1.0}},
    };
    if (color_id < 0 || color_id >= vocab.size())
        throw std::invalid_argument("color id out of range");
    auto it = palette.find(vocab.tokens[color_id]);
    if (it == palette.end())
        throw std::invalid_argument("token is not a color: " +
                                    vocab.tokens[color_id]);
    return it->second;
}

bool shape_contains(const std::string& shape, double cx, double cy,
                    double radius, int resolution, int px, int py) {
    double x = (px + 0.5) / resolution;
    double y = (py + 0.5) / resolution;
    double dx = x - cx, dy = y - cy;
    double r = radius;
    if (shape == "circle") return dx * dx + dy * dy <= r * r;
    if (shape == "square")
        return std::abs(dx) <= 0.85 * r && std::abs(dy) <= 0.85 * r;
    if (shape == "triangle") {
        // Apex up; base at dy = 0.7 r.
        if (dy < -r || dy > 0.7 * r) return false;
        double half_width = 0.95 * r * (dy + r) / (1.7 * r);
        return std::abs(dx) <= half_width;
    }
    if (shape == "diamond") return std::abs(dx) + std::abs(dy) <= 1.15 * r;
    if (shape == "cross")
        return (std::abs(dx) <= 0.35 * r && std::abs(dy) <= r) ||
               (std::abs(dy) <= 0.35 * r && std::abs(dx) <= r);
    if (shape == "ring") {
        double d2 = dx * dx + dy * dy;
        return d2 <= r * r && d2 >= (0.55 * r) * (0.55 * r);
    }
    if (shape == "brick") return std::abs(dy) <= 0.45 * r && std::abs(dx) <= r;
    if (shape == "pillar") return std::abs(dx) <= 0.45 * r && std::abs(dy) <= r;
    throw std::invalid_argument("unknown shape: " + shape);
}

namespace {

std::vector<uint8_t> entity_mask(const Vocabulary& vocab, const Entity& e,
                                 int resolution) {
    std::vector<uint8_t> m(static_cast<size_t>(resolution) * resolution, 0);
    const std::string& name = vocab.tokens[e.shape_id];
    for (int y = 0; y < resolution; ++y)
        for (int x = 0; x < resolution; ++x)
            if (shape_contains(name, e.cx, e.cy, e.radius, resolution, x, y))
                m[static_cast<size_t>(y) * resolution + x] = 1;
    return m;
}

}  // namespace

Image render_scene(const Vocabulary& vocab, const SceneSpec& spec,
                   const RenderOptions& opts) {
    if (opts.resolution < 16)
        throw std::invalid_argument("render_scene: resolution must be >= 16");
    if (spec.entities.size() > 3)
        throw std::invalid_argument("render_scene: at most 3 entities");
    for (const Entity& e : spec.entities) {
        if (!vocab.is_subject(e.shape_id))
            throw std::invalid_argument("render_scene: bad shape id");
        if (!vocab.is_attribute(e.color_id))
            throw std::invalid_argument("render_scene: bad color id");
        if (e.cx < 0 || e.cx > 1 || e.cy < 0 || e.cy > 1)
            throw std::invalid_argument("render_scene: center outside [0,1]^2");
        if (e.radius <= 0 || e.radius > 0.5)
            throw std::invalid_argument("render_scene: radius outside (0,0.5]");
    }

    std::vector<std::vector<uint8_t>> masks;
    std::vector<int> areas;
    for (const Entity& e : spec.entities) {
        masks.push_back(entity_mask(vocab, e, opts.resolution));
        int a = 0;
        for (uint8_t b : masks.back()) a += b;
        areas.push_back(a);
    }
    for (size_t i = 0; i < masks.size(); ++i)
        for (size_t j = i + 1; j < masks.size(); ++j) {
            int inter = 0;
            for (size_t k = 0; k < masks[i].size(); ++k)
                inter += masks[i][k] & masks[j][k];
            int smaller = std::min(areas[i], areas[j]);
            if (smaller > 0 &&
                static_cast<double>(inter) / smaller > opts.overlap_budget)
                throw std::runtime_error(
                    "render_scene: entity overlap exceeds budget");
        }

    Image img(opts.resolution, opts.resolution, 3);
    auto bg = background_color();
    for (int y = 0; y < opts.resolution; ++y)
        for (int x = 0; x < opts.resolution; ++x)
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = bg[c];
    for (size_t i = 0; i < spec.entities.size(); ++i) {
        auto col = color_value(vocab, spec.entities[i].color_id);
        for (int y = 0; y < opts.resolution; ++y)
            for (int x = 0; x < opts.resolution; ++x)
                if (masks[i][static_cast<size_t>(y) * opts.resolution + x])
                    for (int c = 0; c < 3; ++c) img.at(y, x, c) = col[c];
    }
    return img;
}

namespace {

Entity random_entity(Rng& rng, const SceneSamplerOptions& opts, int shape_id,
                     int color_id) {
    std::uniform_real_distribution<double> ur(opts.min_radius, opts.max_radius);
    Entity e;
    e.shape_id = shape_id;
    e.color_id = color_id;
    e.radius = ur(rng);
    std::uniform_real_distribution<double> uc(e.radius + 0.02,
                                              1.0 - e.radius - 0.02);
    e.cx = uc(rng);
    e.cy = uc(rng);
    return e;
}

bool scene_renders(const Vocabulary& vocab, const SceneSpec& spec,
                   const RenderOptions& render) {
    try {
        render_scene(vocab, spec, render);
    } catch (const std::runtime_error&) {
        return false;
    }
    // Entities must not touch: same-colored shapes that merge into one blob
    // would break the detector round trip the training data relies on.
    const int R = render.resolution;
    std::vector<std::vector<uint8_t>> masks;
    for (const Entity& e : spec.entities)
        masks.push_back(entity_mask(vocab, e, R));
    for (size_t i = 0; i < masks.size(); ++i)
        for (size_t j = i + 1; j < masks.size(); ++j)
            for (int y = 0; y < R; ++y)
                for (int x = 0; x < R; ++x) {
                    if (!masks[i][static_cast<size_t>(y) * R + x]) continue;
                    for (int dy = -2; dy <= 2; ++dy)
                        for (int dx = -2; dx <= 2; ++dx) {
                            int ny = y + dy, nx = x + dx;
                            if (ny < 0 || ny >= R || nx < 0 || nx >= R)
                                continue;
                            if (masks[j][static_cast<size_t>(ny) * R + nx])
                                return false;
                        }
                }
    return true;
}

}  // namespace

SceneSample sample_scene(const Vocabulary& vocab, Rng& rng,
                         const SceneSamplerOptions& opts) {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    auto pick = [&rng](const std::vector<int>& ids) {
        std::uniform_int_distribution<size_t> d(0, ids.size() - 1);
        return ids[d(static_cast<Rng&>(rng))];
    };

    bool two = u01(rng) < opts.two_subject_fraction;
    int shape_a = pick(vocab.subject_tokens);
    int shape_b = shape_a;
    while (two && shape_b == shape_a) shape_b = pick(vocab.subject_tokens);

    bool color_a_named = u01(rng) < opts.color_fraction;
    bool color_b_named = two && u01(rng) < opts.color_fraction;
    int color_a = pick(vocab.attribute_tokens);
    int color_b = pick(vocab.attribute_tokens);

    std::string text = "a ";
    if (color_a_named) text += vocab.tokens[color_a] + " ";
    text += vocab.tokens[shape_a];
    if (two) {
        text += " and a ";
        if (color_b_named) text += vocab.tokens[color_b] + " ";
        text += vocab.tokens[shape_b];
    }

    // Drop one prompted subject from the rendered scene with the configured
    // probability; this label/image mismatch is what lets the trained model
    // exhibit catastrophic neglect.
    bool drop = two && u01(rng) < opts.bias.drop_fraction;
    bool drop_second = u01(rng) < 0.5;

    SceneSpec spec;
    for (int attempt = 0; attempt < 256; ++attempt) {
        spec.entities.clear();
        if (!(drop && !drop_second))
            spec.entities.push_back(
                random_entity(rng, opts, shape_a, color_a));
        if (two && !(drop && drop_second))
            spec.entities.push_back(
                random_entity(rng, opts, shape_b, color_b));
        if (scene_renders(vocab, spec, opts.render)) break;
        if (attempt == 255)
            throw std::runtime_error("sample_scene: could not place entities");
    }

    SceneSample sample;
    sample.spec = spec;
    sample.prompt = encode_prompt(vocab, text);
    return sample;
}

}  // namespace aex
