#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "aex/common.hpp"
#include "aex/vocab.hpp"

namespace aex {

/// One shape instance: token ids into the vocabulary plus unit-square
/// placement (radius is a fraction of the image side).
struct Entity {
    int shape_id = -1;
    int color_id = -1;
    double cx = 0.5;
    double cy = 0.5;
    double radius = 0.2;
};

struct SceneSpec {
    std::vector<Entity> entities;
};

/// RGB of a color token in [-1, 1]; shapes are solid fills over a dark
/// background.
std::array<double, 3> color_value(const Vocabulary& vocab, int color_id);
std::array<double, 3> background_color();

/// Binary membership test for a shape at a continuous center/radius,
/// evaluated at the pixel-center (px, py) of a `resolution`-sized raster.
bool shape_contains(const std::string& shape_name, double cx, double cy,
                    double radius, int resolution, int px, int py);

struct RenderOptions {
    int resolution = 32;
    /// Max allowed pairwise overlap as a fraction of the smaller entity's
    /// pixel area.
    double overlap_budget = 0.10;
};

/// Deterministic raster of solid shapes. Throws std::invalid_argument on
/// bad specs and std::runtime_error when the overlap budget is exceeded.
Image render_scene(const Vocabulary& vocab, const SceneSpec& spec,
                   const RenderOptions& opts);

/// Controls deliberate label/image mismatch: the fraction of two-subject
/// samples whose rendered scene drops one prompted subject.
struct NeglectBias {
    double drop_fraction = 0.0;
};

struct SceneSample {
    SceneSpec spec;
    TokenPrompt prompt;
};

struct SceneSamplerOptions {
    NeglectBias bias;
    /// Probability that a sampled prompt names two subjects.
    double two_subject_fraction = 0.7;
    /// Probability that a named subject carries a color attribute.
    double color_fraction = 0.6;
    double min_radius = 0.12;
    double max_radius = 0.20;
    RenderOptions render;
};

/// Draws a (scene, prompt) pair. Prompt text follows the toy analogs of
/// the benchmark templates ("a circle", "a red circle and a blue square").
SceneSample sample_scene(const Vocabulary& vocab, Rng& rng,
                         const SceneSamplerOptions& opts);

}  // namespace aex
