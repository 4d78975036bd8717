#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "aex/bench.hpp"
#include "aex/gsn.hpp"
#include "aex/model.hpp"
#include "aex/world.hpp"

namespace aex {

/// Everything one experiment needs, loaded from a strict JSON config:
/// unknown keys anywhere in the document are rejected so hyperparameter
/// typos fail loudly instead of silently using a default.
struct RunConfig {
    SceneSamplerOptions world;
    int dataset_size = 2048;
    DenoiserConfig model;
    int schedule_T = 50;
    double beta_start = 0.004;
    double beta_end = 0.16;
    GsnConfig gsn;
    TrainOptions train;
    std::string bench_kind = "subject-subject";
    int seeds_per_prompt = 64;
    std::vector<std::string> templates;  // empty -> default_templates()
    std::string output_dir;
    std::vector<uint64_t> seeds = {0};
    bool deterministic = true;
    /// Compute precision label. Arithmetic runs in 64-bit; checkpoints
    /// always store 32-bit floats.
    std::string precision = "f64";

    NoiseSchedule make_schedule() const;
    void validate() const;
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string serialize_run_config(const RunConfig& cfg);

// ---- Checkpoints ----------------------------------------------------------
//
// Binary layout (version 1), documented here and in the README:
//   bytes 0..7   magic "AEXCKPT1"
//   bytes 8..11  header length H (uint32, little-endian)
//   bytes 12..12+H-1  JSON header: format version, denoiser config,
//                     schedule betas, vocabulary (tokens + class ids +
//                     FNV-1a hash), loss trace, and an ordered parameter
//                     table of {name, rows, cols}
//   remainder    the parameters' values in table order, row-major,
//                little-endian float32

void save_checkpoint(const std::filesystem::path& path, const Model& m);
Model load_checkpoint(const std::filesystem::path& path);

// ---- Dataset manifest ------------------------------------------------------

struct DatasetRecord {
    SceneSpec scene;
    TokenPrompt prompt;
    std::string image_file;  // relative to the manifest's directory
};

/// Writes images as PNG plus a manifest.jsonl with one record per sample.
void save_dataset(const std::filesystem::path& dir,
                  const std::vector<SceneSample>& samples,
                  const Vocabulary& vocab, const RenderOptions& render);
std::vector<DatasetRecord> load_dataset_manifest(
    const std::filesystem::path& dir);

// ---- Images ---------------------------------------------------------------

/// 8-bit PNG writer (RGB or grayscale) with fixed zlib settings, so the
/// same image always produces the same bytes.
void write_png(const std::filesystem::path& path, const Image& img);

/// Renders a scalar map through a fixed black-purple-orange-yellow
/// colormap (values clamped to [0, 1]) and upsamples nearest-neighbor by
/// an integer factor.
Image heatmap_image(const Eigen::MatrixXd& map, int upsample);

// ---- Run records and reports ------------------------------------------------

void save_run_record(const std::filesystem::path& path,
                     const GenerationRecord& rec);

struct MetricRow {
    std::string method;  // "vanilla" | "gsn" | ablation name
    std::string subset;
    std::string metric;
    double value = 0.0;
};

struct MetricsReport {
    std::vector<MetricRow> rows;
    /// Per-prompt breakdown entries: (method, prompt, metric, value).
    std::vector<std::tuple<std::string, std::string, std::string, double>>
        per_prompt;
    int prompts = 0;
    int seeds_per_prompt = 0;
    int excluded_runs = 0;
};

void write_metrics_csv(const std::filesystem::path& path,
                       const MetricsReport& report);
void write_metrics_json(const std::filesystem::path& path,
                        const MetricsReport& report);

/// Grouped bar chart: one group per metric, one bar per method.
void write_bar_chart(const std::filesystem::path& path,
                     const std::vector<std::string>& metrics,
                     const std::vector<std::string>& methods,
                     const std::vector<std::vector<double>>& values);

void write_loss_csv(const std::filesystem::path& path,
                    const std::vector<double>& trace);

}  // namespace aex
