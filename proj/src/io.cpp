#include "aex/io.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "json.hpp"

namespace aex {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void check_keys(const json& j, const std::vector<std::string>& allowed,
                const std::string& ctx) {
    if (!j.is_object())
        throw std::invalid_argument("config: " + ctx + " must be an object");
    for (const auto& [key, value] : j.items()) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
            throw std::invalid_argument("config: unknown key \"" + key +
                                        "\" in " + ctx);
    }
}

template <typename T>
void read_field(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::invalid_argument("cannot open file: " + path.string());
    std::ostringstream oss;
    oss << in.rdbuf();
    return oss.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw std::runtime_error("cannot write file: " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace

NoiseSchedule RunConfig::make_schedule() const {
    return NoiseSchedule::linear(schedule_T, beta_start, beta_end);
}

void RunConfig::validate() const {
    if (seeds.empty())
        throw std::invalid_argument("config: seed list must be nonempty");
    if (dataset_size < 1)
        throw std::invalid_argument("config: dataset_size must be positive");
    if (precision != "f64" && precision != "f32")
        throw std::invalid_argument("config: precision must be f64 or f32");
    (void)subset_kind_from_name(bench_kind);
    model.validate();
    make_schedule().validate();
    gsn.validate();
}

namespace {

void parse_world(const json& j, SceneSamplerOptions& w, int& dataset_size) {
    check_keys(j,
               {"drop_fraction", "two_subject_fraction", "color_fraction",
                "min_radius", "max_radius", "resolution", "overlap_budget",
                "dataset_size"},
               "world");
    read_field(j, "drop_fraction", w.bias.drop_fraction);
    read_field(j, "two_subject_fraction", w.two_subject_fraction);
    read_field(j, "color_fraction", w.color_fraction);
    read_field(j, "min_radius", w.min_radius);
    read_field(j, "max_radius", w.max_radius);
    read_field(j, "resolution", w.render.resolution);
    read_field(j, "overlap_budget", w.render.overlap_budget);
    read_field(j, "dataset_size", dataset_size);
}

json world_json(const SceneSamplerOptions& w, int dataset_size) {
    return {{"drop_fraction", w.bias.drop_fraction},
            {"two_subject_fraction", w.two_subject_fraction},
            {"color_fraction", w.color_fraction},
            {"min_radius", w.min_radius},
            {"max_radius", w.max_radius},
            {"resolution", w.render.resolution},
            {"overlap_budget", w.render.overlap_budget},
            {"dataset_size", dataset_size}};
}

void parse_model(const json& j, DenoiserConfig& m) {
    check_keys(j,
               {"latent_resolution", "attention_resolution", "channels", "dim",
                "heads", "blocks", "text_blocks", "mlp_mult", "max_prompt_len",
                "cond_dropout", "guidance_scale"},
               "model");
    read_field(j, "latent_resolution", m.latent_resolution);
    read_field(j, "attention_resolution", m.attention_resolution);
    read_field(j, "channels", m.channels);
    read_field(j, "dim", m.dim);
    read_field(j, "heads", m.heads);
    read_field(j, "blocks", m.blocks);
    read_field(j, "text_blocks", m.text_blocks);
    read_field(j, "mlp_mult", m.mlp_mult);
    read_field(j, "max_prompt_len", m.max_prompt_len);
    read_field(j, "cond_dropout", m.cond_dropout);
    read_field(j, "guidance_scale", m.guidance_scale);
}

json model_json(const DenoiserConfig& m) {
    return {{"latent_resolution", m.latent_resolution},
            {"attention_resolution", m.attention_resolution},
            {"channels", m.channels},
            {"dim", m.dim},
            {"heads", m.heads},
            {"blocks", m.blocks},
            {"text_blocks", m.text_blocks},
            {"mlp_mult", m.mlp_mult},
            {"max_prompt_len", m.max_prompt_len},
            {"cond_dropout", m.cond_dropout},
            {"guidance_scale", m.guidance_scale}};
}

void parse_gsn(const json& j, GsnConfig& g) {
    check_keys(j,
               {"enabled", "alpha_start", "alpha_end", "update_window",
                "checkpoints", "max_refinement_updates", "kernel_size",
                "kernel_sigma", "softmax_mode"},
               "gsn");
    read_field(j, "enabled", g.enabled);
    read_field(j, "alpha_start", g.alpha_start);
    read_field(j, "alpha_end", g.alpha_end);
    read_field(j, "update_window", g.update_window);
    read_field(j, "max_refinement_updates", g.max_refinement_updates);
    read_field(j, "kernel_size", g.kernel.size);
    read_field(j, "kernel_sigma", g.kernel.sigma);
    if (j.contains("checkpoints")) {
        g.checkpoints.clear();
        for (const json& c : j.at("checkpoints")) {
            if (!c.is_array() || c.size() != 2)
                throw std::invalid_argument(
                    "config: gsn checkpoints must be [iteration, threshold] "
                    "pairs");
            g.checkpoints.emplace_back(c[0].get<int>(), c[1].get<double>());
        }
    }
    if (j.contains("softmax_mode")) {
        std::string mode = j.at("softmax_mode").get<std::string>();
        if (mode == "value_logits")
            g.softmax_mode = SoftmaxMode::ValueLogits;
        else if (mode == "log_probs")
            g.softmax_mode = SoftmaxMode::LogProbs;
        else
            throw std::invalid_argument("config: unknown softmax_mode " + mode);
    }
}

json gsn_json(const GsnConfig& g) {
    json cps = json::array();
    for (const auto& [it, thr] : g.checkpoints) cps.push_back({it, thr});
    return {{"enabled", g.enabled},
            {"alpha_start", g.alpha_start},
            {"alpha_end", g.alpha_end},
            {"update_window", g.update_window},
            {"checkpoints", cps},
            {"max_refinement_updates", g.max_refinement_updates},
            {"kernel_size", g.kernel.size},
            {"kernel_sigma", g.kernel.sigma},
            {"softmax_mode", g.softmax_mode == SoftmaxMode::ValueLogits
                                 ? "value_logits"
                                 : "log_probs"}};
}

void parse_train(const json& j, TrainOptions& t) {
    check_keys(j, {"steps", "batch_size", "lr", "log_every", "verbose"},
               "train");
    read_field(j, "steps", t.steps);
    read_field(j, "batch_size", t.batch_size);
    read_field(j, "lr", t.lr);
    read_field(j, "log_every", t.log_every);
    read_field(j, "verbose", t.verbose);
}

json train_json(const TrainOptions& t) {
    return {{"steps", t.steps},
            {"batch_size", t.batch_size},
            {"lr", t.lr},
            {"log_every", t.log_every},
            {"verbose", t.verbose}};
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw std::invalid_argument(std::string("config: bad JSON: ") +
                                    e.what());
    }
    check_keys(j,
               {"world", "model", "schedule", "gsn", "train", "bench",
                "output_dir", "seeds", "deterministic", "precision"},
               "top level");
    RunConfig cfg;
    if (j.contains("world")) parse_world(j["world"], cfg.world, cfg.dataset_size);
    if (j.contains("model")) parse_model(j["model"], cfg.model);
    if (j.contains("schedule")) {
        const json& s = j["schedule"];
        check_keys(s, {"T", "beta_start", "beta_end"}, "schedule");
        read_field(s, "T", cfg.schedule_T);
        read_field(s, "beta_start", cfg.beta_start);
        read_field(s, "beta_end", cfg.beta_end);
    }
    if (j.contains("gsn")) parse_gsn(j["gsn"], cfg.gsn);
    if (j.contains("train")) parse_train(j["train"], cfg.train);
    if (j.contains("bench")) {
        const json& b = j["bench"];
        check_keys(b, {"kind", "seeds_per_prompt", "templates"}, "bench");
        read_field(b, "kind", cfg.bench_kind);
        read_field(b, "seeds_per_prompt", cfg.seeds_per_prompt);
        read_field(b, "templates", cfg.templates);
    }
    read_field(j, "output_dir", cfg.output_dir);
    read_field(j, "seeds", cfg.seeds);
    read_field(j, "deterministic", cfg.deterministic);
    read_field(j, "precision", cfg.precision);
    cfg.validate();
    return cfg;
}

RunConfig load_run_config(const fs::path& path) {
    return parse_run_config(read_file(path));
}

std::string serialize_run_config(const RunConfig& cfg) {
    json j = {
        {"world", world_json(cfg.world, cfg.dataset_size)},
        {"model", model_json(cfg.model)},
        {"schedule",
         {{"T", cfg.schedule_T},
          {"beta_start", cfg.beta_start},
          {"beta_end", cfg.beta_end}}},
        {"gsn", gsn_json(cfg.gsn)},
        {"train", train_json(cfg.train)},
        {"bench",
         {{"kind", cfg.bench_kind},
          {"seeds_per_prompt", cfg.seeds_per_prompt},
          {"templates", cfg.templates}}},
        {"output_dir", cfg.output_dir},
        {"seeds", cfg.seeds},
        {"deterministic", cfg.deterministic},
        {"precision", cfg.precision},
    };
    return j.dump(2) + "\n";
}

// ---- Checkpoints ------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'A', 'E', 'X', 'C', 'K', 'P', 'T', '1'};
constexpr uint32_t kCheckpointVersion = 1;

void append_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i)
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_f32(std::string& out, float v) {
    static_assert(sizeof(float) == 4);
    char buf[4];
    std::memcpy(buf, &v, 4);
    out.append(buf, 4);
}

}  // namespace

void save_checkpoint(const fs::path& path, const Model& m) {
    json params = json::array();
    for (const auto& [name, mat] : m.params)
        params.push_back({{"name", name},
                          {"rows", static_cast<int>(mat.rows())},
                          {"cols", static_cast<int>(mat.cols())}});
    std::vector<double> betas;
    for (int t = 1; t <= m.schedule.T; ++t) betas.push_back(m.schedule.beta(t));
    json header = {
        {"version", kCheckpointVersion},
        {"config", model_json(m.config)},
        {"schedule", {{"T", m.schedule.T}, {"betas", betas}}},
        {"vocab",
         {{"tokens", m.vocab.tokens},
          {"subject_tokens", m.vocab.subject_tokens},
          {"attribute_tokens", m.vocab.attribute_tokens},
          {"hash", m.vocab.hash()}}},
        {"loss_trace", m.loss_trace},
        {"params", params},
    };
    std::string hs = header.dump();

    std::string out;
    out.append(kMagic, 8);
    append_u32(out, static_cast<uint32_t>(hs.size()));
    out += hs;
    for (const auto& [name, mat] : m.params)
        for (Eigen::Index r = 0; r < mat.rows(); ++r)
            for (Eigen::Index c = 0; c < mat.cols(); ++c)
                append_f32(out, static_cast<float>(mat(r, c)));
    write_file(path, out);
}

Model load_checkpoint(const fs::path& path) {
    std::string data = read_file(path);
    if (data.size() < 12 || std::memcmp(data.data(), kMagic, 8) != 0)
        throw std::invalid_argument("checkpoint: bad magic in " +
                                    path.string());
    uint32_t hlen = 0;
    for (int i = 0; i < 4; ++i)
        hlen |= static_cast<uint32_t>(
                    static_cast<unsigned char>(data[8 + i]))
                << (8 * i);
    if (data.size() < 12 + static_cast<size_t>(hlen))
        throw std::invalid_argument("checkpoint: truncated header");
    json header = json::parse(data.substr(12, hlen));
    if (header.at("version").get<uint32_t>() != kCheckpointVersion)
        throw std::invalid_argument("checkpoint: unsupported version");

    Model m;
    parse_model(header.at("config"), m.config);

    const json& sj = header.at("schedule");
    int T = sj.at("T").get<int>();
    std::vector<double> betas = sj.at("betas").get<std::vector<double>>();
    if (static_cast<int>(betas.size()) != T)
        throw std::invalid_argument("checkpoint: schedule length mismatch");
    m.schedule.T = T;
    m.schedule.beta = Eigen::VectorXd::Zero(T + 1);
    m.schedule.alpha_bar = Eigen::VectorXd::Ones(T + 1);
    for (int t = 1; t <= T; ++t) {
        m.schedule.beta(t) = betas[t - 1];
        m.schedule.alpha_bar(t) =
            m.schedule.alpha_bar(t - 1) * (1.0 - betas[t - 1]);
    }
    m.schedule.validate();

    const json& vj = header.at("vocab");
    m.vocab.tokens = vj.at("tokens").get<std::vector<std::string>>();
    m.vocab.subject_tokens = vj.at("subject_tokens").get<std::vector<int>>();
    m.vocab.attribute_tokens =
        vj.at("attribute_tokens").get<std::vector<int>>();
    if (vj.at("hash").get<uint64_t>() != m.vocab.hash())
        throw std::invalid_argument("checkpoint: vocabulary hash mismatch");
    m.loss_trace = header.at("loss_trace").get<std::vector<double>>();

    size_t off = 12 + hlen;
    for (const json& p : header.at("params")) {
        std::string name = p.at("name").get<std::string>();
        int rows = p.at("rows").get<int>(), cols = p.at("cols").get<int>();
        size_t need = static_cast<size_t>(rows) * cols * 4;
        if (data.size() < off + need)
            throw std::invalid_argument("checkpoint: truncated weights at " +
                                        name);
        Eigen::MatrixXd mat(rows, cols);
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) {
                float v;
                std::memcpy(&v, data.data() + off, 4);
                off += 4;
                mat(r, c) = static_cast<double>(v);
            }
        m.params.emplace_back(std::move(name), std::move(mat));
    }
    if (off != data.size())
        throw std::invalid_argument("checkpoint: trailing bytes");
    return m;
}

// ---- PNG --------------------------------------------------------------------

namespace {

void append_u32_be(std::string& out, uint32_t v) {
    for (int i = 3; i >= 0; --i)
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_chunk(std::string& out, const char type[4],
                  const std::string& payload) {
    append_u32_be(out, static_cast<uint32_t>(payload.size()));
    std::string body(type, 4);
    body += payload;
    out += body;
    uLong crc = crc32(0L, reinterpret_cast<const Bytef*>(body.data()),
                      static_cast<uInt>(body.size()));
    append_u32_be(out, static_cast<uint32_t>(crc));
}

uint8_t to_byte(double v) {
    double u = (std::clamp(v, -1.0, 1.0) + 1.0) * 0.5;
    return static_cast<uint8_t>(std::lround(u * 255.0));
}

}  // namespace

void write_png(const fs::path& path, const Image& img) {
    if (img.channels != 1 && img.channels != 3)
        throw std::invalid_argument("write_png: need 1 or 3 channels");
    if (img.width < 1 || img.height < 1)
        throw std::invalid_argument("write_png: empty image");

    std::string raw;
    raw.reserve(static_cast<size_t>(img.height) *
                (1 + static_cast<size_t>(img.width) * img.channels));
    for (int y = 0; y < img.height; ++y) {
        raw.push_back('\0');  // filter type 0 per scanline
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c)
                raw.push_back(static_cast<char>(to_byte(img.at(y, x, c))));
    }

    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::string compressed(bound, '\0');
    // Fixed level 6 keeps output bytes reproducible across runs.
    if (compress2(reinterpret_cast<Bytef*>(compressed.data()), &bound,
                  reinterpret_cast<const Bytef*>(raw.data()),
                  static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw std::runtime_error("write_png: zlib compression failed");
    compressed.resize(bound);

    std::string out("\x89PNG\r\n\x1a\n", 8);
    std::string ihdr;
    append_u32_be(ihdr, static_cast<uint32_t>(img.width));
    append_u32_be(ihdr, static_cast<uint32_t>(img.height));
    ihdr.push_back(8);                                // bit depth
    ihdr.push_back(img.channels == 3 ? 2 : 0);        // color type
    ihdr.push_back(0);                                // compression
    ihdr.push_back(0);                                // filter
    ihdr.push_back(0);                                // interlace
    append_chunk(out, "IHDR", ihdr);
    append_chunk(out, "IDAT", compressed);
    append_chunk(out, "IEND", "");
    write_file(path, out);
}

namespace {

/// Fixed 5-stop colormap (black, purple, red, orange, yellow), linearly
/// interpolated; input clamped to [0, 1].
std::array<double, 3> colormap(double v) {
    static const double stops[5][3] = {{0.0, 0.0, 0.0},
                                       {0.35, 0.0, 0.5},
                                       {0.8, 0.1, 0.15},
                                       {1.0, 0.55, 0.0},
                                       {1.0, 1.0, 0.3}};
    v = std::clamp(v, 0.0, 1.0) * 4.0;
    int lo = std::min(3, static_cast<int>(v));
    double f = v - lo;
    return {stops[lo][0] + f * (stops[lo + 1][0] - stops[lo][0]),
            stops[lo][1] + f * (stops[lo + 1][1] - stops[lo][1]),
            stops[lo][2] + f * (stops[lo + 1][2] - stops[lo][2])};
}

}  // namespace

Image heatmap_image(const Eigen::MatrixXd& map, int upsample) {
    if (upsample < 1)
        throw std::invalid_argument("heatmap_image: upsample must be >= 1");
    if (map.rows() == 0 || map.cols() == 0)
        throw std::invalid_argument("heatmap_image: empty map");
    const int H = static_cast<int>(map.rows()) * upsample;
    const int W = static_cast<int>(map.cols()) * upsample;
    Image img(H, W, 3);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            auto rgb = colormap(map(y / upsample, x / upsample));
            for (int c = 0; c < 3; ++c)
                img.at(y, x, c) = rgb[c] * 2.0 - 1.0;
        }
    return img;
}

// ---- Run records and reports -------------------------------------------------

void save_run_record(const fs::path& path, const GenerationRecord& rec) {
    json steps = json::array();
    for (const StepDiagnostics& d : rec.steps)
        steps.push_back({{"iteration", d.iteration},
                         {"t", d.t},
                         {"subject_losses", d.subject_losses},
                         {"loss", d.loss},
                         {"argmax_subject", d.argmax_subject},
                         {"alpha", d.alpha},
                         {"refinement_updates", d.refinement_updates},
                         {"checkpoint", d.checkpoint},
                         {"threshold_met", d.threshold_met},
                         {"updated", d.updated}});
    json j = {{"seed", rec.seed},
              {"prompt", rec.prompt_text},
              {"refinement_triggered", rec.refinement_triggered},
              {"steps", steps}};
    write_file(path, j.dump(2) + "\n");
}

void write_metrics_csv(const fs::path& path, const MetricsReport& report) {
    std::ostringstream oss;
    oss << "method,subset,metric,value\n";
    for (const MetricRow& r : report.rows)
        oss << r.method << ',' << r.subset << ',' << r.metric << ','
            << std::setprecision(12) << r.value << '\n';
    write_file(path, oss.str());
}

void write_metrics_json(const fs::path& path, const MetricsReport& report) {
    json rows = json::array();
    for (const MetricRow& r : report.rows)
        rows.push_back({{"method", r.method},
                        {"subset", r.subset},
                        {"metric", r.metric},
                        {"value", r.value}});
    json per_prompt = json::array();
    for (const auto& [method, prompt, metric, value] : report.per_prompt)
        per_prompt.push_back({{"method", method},
                              {"prompt", prompt},
                              {"metric", metric},
                              {"value", value}});
    json j = {{"prompts", report.prompts},
              {"seeds_per_prompt", report.seeds_per_prompt},
              {"excluded_runs", report.excluded_runs},
              {"rows", rows},
              {"per_prompt", per_prompt}};
    write_file(path, j.dump(2) + "\n");
}

void write_bar_chart(const fs::path& path,
                     const std::vector<std::string>& metrics,
                     const std::vector<std::string>& methods,
                     const std::vector<std::vector<double>>& values) {
    if (metrics.empty() || methods.empty())
        throw std::invalid_argument("write_bar_chart: empty axes");
    if (values.size() != methods.size())
        throw std::invalid_argument("write_bar_chart: values/methods mismatch");
    for (const auto& v : values)
        if (v.size() != metrics.size())
            throw std::invalid_argument(
                "write_bar_chart: values/metrics mismatch");

    static const double palette[4][3] = {{0.35, 0.45, 0.85},
                                         {0.9, 0.45, 0.2},
                                         {0.35, 0.7, 0.4},
                                         {0.7, 0.35, 0.65}};
    const int H = 240, W = 80 * static_cast<int>(metrics.size()) + 40;
    const int base = H - 20, top = 16;
    double vmax = 1e-9;
    for (const auto& row : values)
        for (double v : row) vmax = std::max(vmax, v);

    Image img(H, W, 3);
    for (double& v : img.data) v = 1.0;  // white canvas
    for (int x = 20; x < W - 10; ++x)    // baseline
        for (int c = 0; c < 3; ++c) img.at(base, x, c) = -1.0;

    const int group_w = 80;
    const int bar_w = std::max(4, (group_w - 20) / static_cast<int>(methods.size()));
    for (size_t g = 0; g < metrics.size(); ++g)
        for (size_t mth = 0; mth < methods.size(); ++mth) {
            double frac = std::clamp(values[mth][g] / vmax, 0.0, 1.0);
            int h = static_cast<int>(frac * (base - top));
            int x0 = 30 + static_cast<int>(g) * group_w +
                     static_cast<int>(mth) * bar_w;
            const double* col = palette[mth % 4];
            for (int y = base - h; y < base; ++y)
                for (int x = x0; x < x0 + bar_w - 2 && x < W; ++x)
                    for (int c = 0; c < 3; ++c)
                        img.at(y, x, c) = col[c] * 2.0 - 1.0;
        }
    write_png(path, img);
}

void write_loss_csv(const fs::path& path, const std::vector<double>& trace) {
    std::ostringstream oss;
    oss << "step,loss\n";
    for (size_t i = 0; i < trace.size(); ++i)
        oss << (i + 1) << ',' << std::setprecision(12) << trace[i] << '\n';
    write_file(path, oss.str());
}

// ---- Dataset manifest ---------------------------------------------------------

void save_dataset(const fs::path& dir, const std::vector<SceneSample>& samples,
                  const Vocabulary& vocab, const RenderOptions& render) {
    fs::create_directories(dir);
    std::ostringstream manifest;
    for (size_t i = 0; i < samples.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "img_%05zu.png", i);
        write_png(dir / name, render_scene(vocab, samples[i].spec, render));

        json entities = json::array();
        for (const Entity& e : samples[i].spec.entities)
            entities.push_back({{"shape_id", e.shape_id},
                                {"color_id", e.color_id},
                                {"cx", e.cx},
                                {"cy", e.cy},
                                {"radius", e.radius}});
        json rec = {{"image", name},
                    {"prompt", samples[i].prompt.text},
                    {"token_ids", samples[i].prompt.ids},
                    {"subject_indices", samples[i].prompt.subject_indices},
                    {"entities", entities}};
        manifest << rec.dump() << '\n';
    }
    write_file(dir / "manifest.jsonl", manifest.str());
}

std::vector<DatasetRecord> load_dataset_manifest(const fs::path& dir) {
    std::istringstream in(read_file(dir / "manifest.jsonl"));
    std::vector<DatasetRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json rec = json::parse(line);
        DatasetRecord r;
        r.image_file = rec.at("image").get<std::string>();
        r.prompt.text = rec.at("prompt").get<std::string>();
        r.prompt.ids = rec.at("token_ids").get<std::vector<int>>();
        r.prompt.subject_indices =
            rec.at("subject_indices").get<std::vector<int>>();
        for (const json& e : rec.at("entities")) {
            Entity ent;
            ent.shape_id = e.at("shape_id").get<int>();
            ent.color_id = e.at("color_id").get<int>();
            ent.cx = e.at("cx").get<double>();
            ent.cy = e.at("cy").get<double>();
            ent.radius = e.at("radius").get<double>();
            r.scene.entities.push_back(ent);
        }
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace aex
