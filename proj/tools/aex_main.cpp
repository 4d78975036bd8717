#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"

#include "CLI11.hpp"
#include "aex/bench.hpp"
#include "aex/gsn.hpp"
#include "aex/io.hpp"

using namespace aex;
namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

/// Output paths resolve against $AEX_OUTPUT_ROOT when they are relative.
fs::path resolve_out(const std::string& dir) {
    fs::path p = dir.empty() ? fs::path("out") : fs::path(dir);
    if (p.is_absolute()) return p;
    if (const char* root = std::getenv("AEX_OUTPUT_ROOT"))
        return fs::path(root) / p;
    return p;
}

std::vector<TrainSample> build_train_set(const RunConfig& cfg,
                                         const Vocabulary& vocab, Rng& rng,
                                         std::vector<SceneSample>* raw) {
    std::vector<TrainSample> ds;
    for (int i = 0; i < cfg.dataset_size; ++i) {
        SceneSample s = sample_scene(vocab, rng, cfg.world);
        TrainSample t;
        t.x0 = image_to_latent(render_scene(vocab, s.spec, cfg.world.render));
        t.prompt = s.prompt;
        ds.push_back(std::move(t));
        if (raw) raw->push_back(std::move(s));
    }
    return ds;
}

int cmd_train(const std::string& config_path, const std::string& out_dir,
              bool save_data) {
    RunConfig cfg = load_run_config(config_path);
    fs::path out = resolve_out(out_dir.empty() ? cfg.output_dir : out_dir);
    fs::create_directories(out);

    Vocabulary vocab = Vocabulary::toy_world();
    Rng rng(cfg.seeds.front());
    std::vector<SceneSample> raw;
    std::vector<TrainSample> ds =
        build_train_set(cfg, vocab, rng, save_data ? &raw : nullptr);
    if (save_data) save_dataset(out / "dataset", raw, vocab, cfg.world.render);

    Model m = train_denoiser(ds, cfg.model, cfg.make_schedule(), vocab, rng,
                             cfg.train);
    save_checkpoint(out / "model.ckpt", m);
    write_loss_csv(out / "train_loss.csv", m.loss_trace);
    std::cout << (out / "model.ckpt").string() << "\n";
    return kExitOk;
}

TokenPrompt prompt_with_subjects(const Model& m, const std::string& text,
                                 const std::vector<int>& subjects) {
    TokenPrompt prompt = encode_prompt(m.vocab, text);
    if (!subjects.empty()) {
        for (int s : subjects)
            if (s < 1 || s >= prompt.length() - 1)
                throw std::invalid_argument(
                    "subject index " + std::to_string(s) +
                    " out of range [1, " + std::to_string(prompt.length() - 2) +
                    "]");
        prompt.subject_indices = subjects;
    }
    return prompt;
}

int cmd_generate(const std::string& ckpt, const std::string& text,
                 const std::vector<uint64_t>& seeds, const std::string& gsn_arg,
                 const std::vector<int>& subjects,
                 const std::vector<int>& dump_attention,
                 const std::string& config_path, const std::string& out_dir) {
    Model m = load_checkpoint(ckpt);
    RunConfig cfg =
        config_path.empty() ? RunConfig{} : load_run_config(config_path);
    TokenPrompt prompt = prompt_with_subjects(m, text, subjects);

    std::vector<bool> arms;  // true = engine on
    if (gsn_arg == "on") arms = {true};
    else if (gsn_arg == "off") arms = {false};
    else if (gsn_arg == "both") arms = {false, true};
    else throw std::invalid_argument("--gsn must be on, off, or both");
    if ((arms.back() || arms.front()) && prompt.subject_indices.empty() &&
        (gsn_arg != "off"))
        throw std::invalid_argument(
            "prompt has no subject tokens; use --subjects or --gsn off");

    fs::path out = resolve_out(out_dir.empty() ? cfg.output_dir : out_dir);
    fs::create_directories(out);

    SampleOptions opts;
    opts.attention_snapshot_iterations = dump_attention;
    GsnConfig gsn = cfg.gsn;
    gsn.enabled = true;
    const int up = std::max(1, m.config.latent_resolution /
                                   m.config.attention_resolution * 4);

    for (uint64_t seed : seeds) {
        for (bool on : arms) {
            std::string arm = on ? "gsn" : "vanilla";
            auto [img, rec] =
                sample(m, prompt, seed, on ? &gsn : nullptr, opts);
            std::string stem = "seed" + std::to_string(seed) + "_" + arm;
            write_png(out / (stem + ".png"), img);
            save_run_record(out / (stem + ".json"), rec);
            for (const auto& [iter, maps] : rec.attention_snapshots)
                for (size_t s = 0; s < maps.size(); ++s)
                    write_png(out / (stem + "_attn_i" + std::to_string(iter) +
                                     "_s" + std::to_string(s) + ".png"),
                              heatmap_image(maps[s], up));
        }
    }
    std::cout << out.string() << "\n";
    return kExitOk;
}

struct ArmOutcome {
    std::vector<Image> images;           // all runs, prompt-major
    std::vector<TokenPrompt> prompts;    // parallel to images
    std::vector<GenerationRecord> records;
};

ArmOutcome run_arm(const Model& m, const BenchmarkSuite& suite,
                   const GsnConfig* gsn) {
    ArmOutcome out;
    for (size_t pi = 0; pi < suite.prompts.size(); ++pi) {
        TokenPrompt prompt = encode_prompt(m.vocab, suite.prompts[pi].text);
        for (int si = 0; si < suite.seeds_per_prompt; ++si) {
            uint64_t seed = fnv1a(suite.prompts[pi].text) + si;
            auto [img, rec] = sample(m, prompt, seed, gsn);
            out.images.push_back(std::move(img));
            out.prompts.push_back(prompt);
            out.records.push_back(std::move(rec));
        }
    }
    return out;
}

/// Renders reference scenes for one sub-prompt ("a circle", "a red ring").
std::vector<Image> reference_images(const Vocabulary& vocab,
                                    const std::string& sub_prompt, int count,
                                    const RenderOptions& render, Rng& rng) {
    std::vector<std::string> words;
    {
        std::istringstream iss(sub_prompt);
        std::string w;
        while (iss >> w) words.push_back(w);
    }
    int color_id = -1, shape_id = -1;
    for (const std::string& w : words) {
        int id = -1;
        try {
            id = vocab.id_of(w);
        } catch (const std::exception&) {
            continue;
        }
        if (vocab.is_subject(id)) shape_id = id;
        if (vocab.is_attribute(id)) color_id = id;
    }
    if (shape_id < 0)
        throw std::invalid_argument("no subject in sub-prompt: " + sub_prompt);
    std::uniform_real_distribution<double> uc(0.3, 0.7), ur(0.14, 0.2);
    std::uniform_int_distribution<size_t> upick(
        0, vocab.attribute_tokens.size() - 1);
    std::vector<Image> out;
    for (int i = 0; i < count; ++i) {
        SceneSpec spec;
        Entity e;
        e.shape_id = shape_id;
        e.color_id = color_id >= 0 ? color_id
                                   : vocab.attribute_tokens[upick(rng)];
        e.cx = uc(rng);
        e.cy = uc(rng);
        e.radius = ur(rng);
        spec.entities.push_back(e);
        out.push_back(render_scene(vocab, spec, render));
    }
    return out;
}

void add_method_metrics(MetricsReport& rep, const std::string& method,
                        const std::string& subset,
                        const BenchmarkSuite& suite, const ArmOutcome& arm,
                        const Vocabulary& vocab,
                        const EmbeddingBackend& backend,
                        const std::vector<std::string>& templates) {
    const int spp = suite.seeds_per_prompt;
    double full = 0, mn = 0, mx = 0, tt = 0;
    int scored_prompts = 0;
    for (size_t pi = 0; pi < suite.prompts.size(); ++pi) {
        std::vector<Image> imgs(
            arm.images.begin() + static_cast<long>(pi) * spp,
            arm.images.begin() + static_cast<long>(pi + 1) * spp);
        ExclusionResult kept = exclude_images(imgs);
        rep.excluded_runs += kept.excluded;
        if (kept.kept.empty()) continue;
        const BenchPrompt& bp = suite.prompts[pi];
        double f = full_prompt_similarity(kept.kept, bp.text, backend, templates);
        double mi = min_object_similarity(kept.kept, bp, backend, templates);
        double ma = max_object_similarity(kept.kept, bp, backend, templates);
        double t2 = text_text_similarity(kept.kept, bp.text, backend, templates);
        full += f;
        mn += mi;
        mx += ma;
        tt += t2;
        ++scored_prompts;
        rep.per_prompt.emplace_back(method, bp.text, "min_object_similarity",
                                    mi);
        rep.per_prompt.emplace_back(method, bp.text, "full_prompt_similarity",
                                    f);
    }
    if (scored_prompts == 0)
        throw std::runtime_error("bench: every run was excluded");
    NeglectStats ns = neglect_rate(arm.images, arm.prompts, vocab);
    rep.rows.push_back({method, subset, "full_prompt_similarity",
                        full / scored_prompts});
    rep.rows.push_back({method, subset, "min_object_similarity",
                        mn / scored_prompts});
    rep.rows.push_back({method, subset, "max_object_similarity",
                        mx / scored_prompts});
    rep.rows.push_back({method, subset, "text_text_similarity",
                        tt / scored_prompts});
    rep.rows.push_back({method, subset, "neglect_rate", ns.neglect_rate});
    rep.rows.push_back(
        {method, subset, "binding_error_rate", ns.binding_error_rate});
}

void emit_report(const fs::path& out, const MetricsReport& rep,
                 const std::vector<std::string>& methods,
                 const std::string& subset) {
    write_metrics_csv(out / "metrics.csv", rep);
    write_metrics_json(out / "metrics.json", rep);

    auto value = [&](const std::string& method, const std::string& metric) {
        for (const MetricRow& r : rep.rows)
            if (r.method == method && r.metric == metric && r.subset == subset)
                return r.value;
        return 0.0;
    };
    std::vector<std::string> sim_metrics = {
        "full_prompt_similarity", "min_object_similarity",
        "max_object_similarity", "text_text_similarity"};
    std::vector<std::vector<double>> sim_values;
    std::vector<std::string> chart_methods = methods;
    chart_methods.push_back("upper_bound");
    for (const std::string& mth : methods) {
        std::vector<double> row;
        for (const std::string& met : sim_metrics) row.push_back(value(mth, met));
        sim_values.push_back(row);
    }
    sim_values.push_back(std::vector<double>(
        sim_metrics.size(), value("reference", "upper_bound")));
    write_bar_chart(out / "similarity.png", sim_metrics, chart_methods,
                    sim_values);

    std::vector<std::string> rate_metrics = {"neglect_rate",
                                             "binding_error_rate"};
    std::vector<std::vector<double>> rate_values;
    for (const std::string& mth : methods) {
        std::vector<double> row;
        for (const std::string& met : rate_metrics)
            row.push_back(value(mth, met));
        rate_values.push_back(row);
    }
    write_bar_chart(out / "neglect.png", rate_metrics, methods, rate_values);
}

BenchmarkSuite make_suite(const Vocabulary& vocab, const RunConfig& cfg,
                          int prompt_limit) {
    std::vector<std::string> shapes, colors;
    for (int id : vocab.subject_tokens) shapes.push_back(vocab.tokens[id]);
    for (int id : vocab.attribute_tokens) colors.push_back(vocab.tokens[id]);
    Rng rng(cfg.seeds.front());
    BenchmarkSuite suite =
        build_benchmark(shapes, shapes, colors,
                        subset_kind_from_name(cfg.bench_kind), rng,
                        cfg.seeds_per_prompt);
    if (prompt_limit > 0 &&
        static_cast<int>(suite.prompts.size()) > prompt_limit)
        suite.prompts.resize(prompt_limit);
    return suite;
}

int cmd_bench(const std::string& ckpt, const std::string& config_path,
              const std::string& kind_arg, int seeds_per_prompt,
              int prompt_limit, const std::string& out_dir) {
    Model m = load_checkpoint(ckpt);
    RunConfig cfg =
        config_path.empty() ? RunConfig{} : load_run_config(config_path);
    if (!kind_arg.empty()) cfg.bench_kind = kind_arg;
    if (seeds_per_prompt > 0) cfg.seeds_per_prompt = seeds_per_prompt;
    (void)subset_kind_from_name(cfg.bench_kind);
    fs::path out = resolve_out(out_dir.empty() ? cfg.output_dir : out_dir);
    fs::create_directories(out);

    BenchmarkSuite suite = make_suite(m.vocab, cfg, prompt_limit);
    std::vector<std::string> templates =
        cfg.templates.empty() ? default_templates() : cfg.templates;
    auto backend = oracle_backend(m.vocab);

    GsnConfig gsn = cfg.gsn;
    gsn.enabled = true;
    ArmOutcome vanilla = run_arm(m, suite, nullptr);
    ArmOutcome excited = run_arm(m, suite, &gsn);

    MetricsReport rep;
    rep.prompts = static_cast<int>(suite.prompts.size());
    rep.seeds_per_prompt = suite.seeds_per_prompt;
    std::string subset = subset_kind_name(suite.kind);
    add_method_metrics(rep, "vanilla", subset, suite, vanilla, m.vocab,
                       *backend, templates);
    add_method_metrics(rep, "gsn", subset, suite, excited, m.vocab, *backend,
                       templates);

    // Upper bound from renderer-made single-subject references.
    std::set<std::string> sub_prompts;
    for (const BenchPrompt& p : suite.prompts) {
        sub_prompts.insert(p.sub_a);
        sub_prompts.insert(p.sub_b);
    }
    Rng ref_rng(cfg.seeds.front() + 1);
    std::vector<SubjectReferences> refs;
    for (const std::string& sp : sub_prompts)
        refs.push_back(
            {sp, reference_images(m.vocab, sp, 4, cfg.world.render, ref_rng)});
    rep.rows.push_back({"reference", subset, "upper_bound",
                        aex::upper_bound(refs, *backend, templates)});

    emit_report(out, rep, {"vanilla", "gsn"}, subset);
    std::cout << (out / "metrics.csv").string() << "\n";
    return kExitOk;
}

GsnConfig ablation_variant(const GsnConfig& base, const std::string& which,
                           int T) {
    GsnConfig v = base;
    v.enabled = true;
    if (which == "no-smoothing") {
        v.kernel.size = 1;
    } else if (which == "no-refinement") {
        v.checkpoints.clear();
    } else if (which == "all-steps") {
        v.update_window = T;
        v.checkpoints.clear();
        for (const auto& cp : base.checkpoints)
            if (cp.first < T) v.checkpoints.push_back(cp);
    } else {
        throw std::invalid_argument("unknown ablation variant: " + which);
    }
    v.validate();
    return v;
}

int cmd_ablate(const std::string& ckpt, const std::string& config_path,
               const std::string& which, int seeds_per_prompt,
               int prompt_limit, const std::string& out_dir) {
    Model m = load_checkpoint(ckpt);
    RunConfig cfg =
        config_path.empty() ? RunConfig{} : load_run_config(config_path);
    if (seeds_per_prompt > 0) cfg.seeds_per_prompt = seeds_per_prompt;
    GsnConfig full = cfg.gsn;
    full.enabled = true;
    GsnConfig variant = ablation_variant(full, which, m.schedule.T);
    fs::path out = resolve_out(out_dir.empty() ? cfg.output_dir : out_dir);
    fs::create_directories(out);

    BenchmarkSuite suite = make_suite(m.vocab, cfg, prompt_limit);
    std::vector<std::string> templates =
        cfg.templates.empty() ? default_templates() : cfg.templates;
    auto backend = oracle_backend(m.vocab);

    ArmOutcome full_arm = run_arm(m, suite, &full);
    ArmOutcome variant_arm = run_arm(m, suite, &variant);

    MetricsReport rep;
    rep.prompts = static_cast<int>(suite.prompts.size());
    rep.seeds_per_prompt = suite.seeds_per_prompt;
    std::string subset = subset_kind_name(suite.kind);
    add_method_metrics(rep, "full", subset, suite, full_arm, m.vocab, *backend,
                       templates);
    add_method_metrics(rep, which, subset, suite, variant_arm, m.vocab,
                       *backend, templates);
    emit_report(out, rep, {"full", which}, subset);
    std::cout << (out / "metrics.csv").string() << "\n";
    return kExitOk;
}

int cmd_report(const std::string& metrics_json, const std::string& out_dir) {
    std::ifstream in(metrics_json);
    if (!in)
        throw std::invalid_argument("cannot open file: " + metrics_json);
    nlohmann::json j = nlohmann::json::parse(in);
    MetricsReport rep;
    rep.prompts = j.value("prompts", 0);
    rep.seeds_per_prompt = j.value("seeds_per_prompt", 0);
    rep.excluded_runs = j.value("excluded_runs", 0);
    std::vector<std::string> methods;
    std::string subset;
    for (const auto& r : j.at("rows")) {
        MetricRow row{r.at("method").get<std::string>(),
                      r.at("subset").get<std::string>(),
                      r.at("metric").get<std::string>(),
                      r.at("value").get<double>()};
        if (row.method != "reference" &&
            std::find(methods.begin(), methods.end(), row.method) ==
                methods.end())
            methods.push_back(row.method);
        subset = row.subset;
        rep.rows.push_back(std::move(row));
    }
    if (rep.rows.empty())
        throw std::invalid_argument("report: no metric rows in " +
                                    metrics_json);
    fs::path out = resolve_out(out_dir);
    fs::create_directories(out);
    emit_report(out, rep, methods, subset);
    std::cout << (out / "similarity.png").string() << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Attend-and-Excite laboratory for a toy diffusion model"};
    app.require_subcommand(1);

    std::string config_path, out_dir, ckpt, prompt_text, gsn_arg = "on";
    std::string kind_arg, variant, metrics_json;
    std::vector<uint64_t> seeds = {0};
    std::vector<int> subjects, dump_attention;
    int seeds_per_prompt = 0, prompt_limit = 0;
    bool save_data = false;

    CLI::App* train = app.add_subcommand("train", "train a denoiser");
    train->add_option("--config", config_path, "run config JSON")->required();
    train->add_option("--out", out_dir, "output directory");
    train->add_flag("--save-dataset", save_data,
                    "also write the dataset manifest and PNGs");

    CLI::App* gen = app.add_subcommand("generate", "sample images");
    gen->add_option("--checkpoint", ckpt, "model checkpoint")->required();
    gen->add_option("--prompt", prompt_text, "prompt text")->required();
    gen->add_option("--seeds", seeds, "seeds")->delimiter(',');
    gen->add_option("--gsn", gsn_arg, "on|off|both");
    gen->add_option("--subjects", subjects,
                    "explicit subject token indices")->delimiter(',');
    gen->add_option("--dump-attention", dump_attention,
                    "iterations at which to export heatmaps")->delimiter(',');
    gen->add_option("--config", config_path, "run config JSON");
    gen->add_option("--out", out_dir, "output directory");

    CLI::App* bench = app.add_subcommand("bench", "run the benchmark");
    bench->add_option("--checkpoint", ckpt, "model checkpoint")->required();
    bench->add_option("--config", config_path, "run config JSON");
    bench->add_option("--kind", kind_arg, "benchmark subset kind");
    bench->add_option("--seeds-per-prompt", seeds_per_prompt,
                      "override seeds per prompt");
    bench->add_option("--prompt-limit", prompt_limit,
                      "cap the number of prompts");
    bench->add_option("--out", out_dir, "output directory");

    CLI::App* ablate = app.add_subcommand("ablate", "run an ablation");
    ablate->add_option("--checkpoint", ckpt, "model checkpoint")->required();
    ablate
        ->add_option("--variant", variant,
                     "no-smoothing|no-refinement|all-steps")
        ->required();
    ablate->add_option("--config", config_path, "run config JSON");
    ablate->add_option("--seeds-per-prompt", seeds_per_prompt,
                       "override seeds per prompt");
    ablate->add_option("--prompt-limit", prompt_limit,
                       "cap the number of prompts");
    ablate->add_option("--out", out_dir, "output directory");

    CLI::App* report = app.add_subcommand("report", "re-render charts");
    report->add_option("--metrics", metrics_json, "metrics JSON file")
        ->required();
    report->add_option("--out", out_dir, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (*train) return cmd_train(config_path, out_dir, save_data);
        if (*gen)
            return cmd_generate(ckpt, prompt_text, seeds, gsn_arg, subjects,
                                dump_attention, config_path, out_dir);
        if (*bench)
            return cmd_bench(ckpt, config_path, kind_arg, seeds_per_prompt,
                             prompt_limit, out_dir);
        if (*ablate)
            return cmd_ablate(ckpt, config_path, variant, seeds_per_prompt,
                              prompt_limit, out_dir);
        if (*report) return cmd_report(metrics_json, out_dir);
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}
