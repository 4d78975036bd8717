#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "aex/bench.hpp"
#include "aex/gsn.hpp"
#include "aex/io.hpp"

namespace py = pybind11;
using namespace aex;

namespace {

py::array_t<double> image_to_array(const Image& img) {
    py::array_t<double> out({img.height, img.width, img.channels});
    std::copy(img.data.begin(), img.data.end(), out.mutable_data());
    return out;
}

Image array_to_image(const py::array_t<double, py::array::c_style |
                                                   py::array::forcecast>& a) {
    if (a.ndim() != 3)
        throw std::invalid_argument("image array must be (H, W, C)");
    Image img(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)),
              static_cast<int>(a.shape(2)));
    std::copy(a.data(), a.data() + a.size(), img.data.begin());
    return img;
}

py::dict record_to_dict(const GenerationRecord& rec) {
    py::dict d;
    d["seed"] = rec.seed;
    d["prompt"] = rec.prompt_text;
    d["refinement_triggered"] = rec.refinement_triggered;
    py::list steps;
    for (const StepDiagnostics& s : rec.steps) {
        py::dict sd;
        sd["iteration"] = s.iteration;
        sd["t"] = s.t;
        sd["subject_losses"] = s.subject_losses;
        sd["loss"] = s.loss;
        sd["argmax_subject"] = s.argmax_subject;
        sd["alpha"] = s.alpha;
        sd["refinement_updates"] = s.refinement_updates;
        sd["checkpoint"] = s.checkpoint;
        sd["threshold_met"] = s.threshold_met;
        sd["updated"] = s.updated;
        steps.append(sd);
    }
    d["steps"] = steps;
    py::list maps;
    for (const Eigen::MatrixXd& m : rec.final_subject_maps) maps.append(m);
    d["final_subject_maps"] = maps;
    py::dict snaps;
    for (const auto& [iter, sm] : rec.attention_snapshots) {
        py::list l;
        for (const Eigen::MatrixXd& m : sm) l.append(m);
        snaps[py::int_(iter)] = l;
    }
    d["attention_snapshots"] = snaps;
    return d;
}

std::vector<TrainSample> config_dataset(const RunConfig& cfg,
                                        const Vocabulary& vocab, Rng& rng) {
    std::vector<TrainSample> ds;
    for (int i = 0; i < cfg.dataset_size; ++i) {
        SceneSample s = sample_scene(vocab, rng, cfg.world);
        ds.push_back({image_to_latent(render_scene(vocab, s.spec,
                                                   cfg.world.render)),
                      s.prompt});
    }
    return ds;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Attend-and-Excite laboratory: toy diffusion model with "
              "cross-attention guidance, oracle metrics, and benchmark tools";

    py::class_<Vocabulary>(m, "Vocabulary")
        .def_static("toy_world", &Vocabulary::toy_world)
        .def_readonly("tokens", &Vocabulary::tokens)
        .def_readonly("subject_tokens", &Vocabulary::subject_tokens)
        .def_readonly("attribute_tokens", &Vocabulary::attribute_tokens)
        .def("id_of", &Vocabulary::id_of)
        .def("is_subject", &Vocabulary::is_subject)
        .def("is_attribute", &Vocabulary::is_attribute);

    py::class_<TokenPrompt>(m, "TokenPrompt")
        .def_readonly("ids", &TokenPrompt::ids)
        .def_readwrite("subject_indices", &TokenPrompt::subject_indices)
        .def_readonly("text", &TokenPrompt::text);
    m.def("encode_prompt", &encode_prompt, py::arg("vocab"), py::arg("text"));

    py::class_<RunConfig>(m, "RunConfig")
        .def(py::init<>())
        .def_static("from_json", &parse_run_config)
        .def_static("load", [](const std::string& p) {
            return load_run_config(p);
        })
        .def("to_json", &serialize_run_config);

    py::class_<Model>(m, "Model")
        .def_static("load", [](const std::string& path) {
            return load_checkpoint(path);
        })
        .def("save", [](const Model& mm, const std::string& path) {
            save_checkpoint(path, mm);
        })
        .def_property_readonly("vocab",
                               [](const Model& mm) { return mm.vocab; })
        .def_property_readonly(
            "loss_trace", [](const Model& mm) { return mm.loss_trace; })
        .def_property_readonly("T",
                               [](const Model& mm) { return mm.schedule.T; });

    m.def(
        "train",
        [](const RunConfig& cfg, uint64_t seed) {
            Vocabulary vocab = Vocabulary::toy_world();
            Rng rng(seed);
            std::vector<TrainSample> ds = config_dataset(cfg, vocab, rng);
            return train_denoiser(ds, cfg.model, cfg.make_schedule(), vocab,
                                  rng, cfg.train);
        },
        py::arg("config"), py::arg("seed") = 0,
        "Sample a synthetic dataset and train a denoiser per the config");

    m.def(
        "sample",
        [](const Model& mm, const std::string& prompt_text, uint64_t seed,
           bool gsn_on, const RunConfig& cfg, bool stochastic,
           const std::vector<int>& snapshot_iterations) {
            TokenPrompt p = encode_prompt(mm.vocab, prompt_text);
            GsnConfig gsn = cfg.gsn;
            gsn.enabled = true;
            SampleOptions opts;
            opts.variant = stochastic ? SamplerVariant::Stochastic
                                      : SamplerVariant::Deterministic;
            opts.attention_snapshot_iterations = snapshot_iterations;
            auto [img, rec] =
                sample(mm, p, seed, gsn_on ? &gsn : nullptr, opts);
            return py::make_tuple(image_to_array(img), record_to_dict(rec));
        },
        py::arg("model"), py::arg("prompt"), py::arg("seed") = 0,
        py::arg("gsn") = true, py::arg("config") = RunConfig{},
        py::arg("stochastic") = false,
        py::arg("snapshot_iterations") = std::vector<int>{},
        "Generate one image; returns (image array in [-1, 1], run record)");

    m.def(
        "render_scene",
        [](const Vocabulary& vocab, const std::string& prompt_text,
           const std::vector<std::tuple<double, double, double>>& placements,
           int resolution) {
            TokenPrompt p = encode_prompt(vocab, prompt_text);
            std::vector<RequestedSubject> req = requested_subjects(vocab, p);
            if (req.size() != placements.size())
                throw std::invalid_argument(
                    "one (cx, cy, radius) placement per prompted subject");
            SceneSpec spec;
            for (size_t i = 0; i < req.size(); ++i) {
                Entity e;
                e.shape_id = req[i].shape_id;
                e.color_id = req[i].color_id >= 0 ? req[i].color_id
                                                  : vocab.attribute_tokens[0];
                std::tie(e.cx, e.cy, e.radius) = placements[i];
                spec.entities.push_back(e);
            }
            RenderOptions opts;
            opts.resolution = resolution;
            return image_to_array(render_scene(vocab, spec, opts));
        },
        py::arg("vocab"), py::arg("prompt"), py::arg("placements"),
        py::arg("resolution") = 32,
        "Rasterize the prompt's subjects at explicit placements");

    m.def(
        "detect",
        [](const py::array_t<double, py::array::c_style |
                                         py::array::forcecast>& img,
           const Vocabulary& vocab, const std::string& prompt_text) {
            TokenPrompt p = encode_prompt(vocab, prompt_text);
            DetectionResult r = detect_subjects(array_to_image(img), p, vocab);
            py::list subjects;
            for (const SubjectDetection& s : r.subjects) {
                py::dict d;
                d["shape"] = vocab.tokens[s.shape_id];
                d["present"] = s.present;
                d["coverage"] = s.coverage;
                if (s.color_match) d["color_match"] = *s.color_match;
                subjects.append(d);
            }
            py::dict out;
            out["subjects"] = subjects;
            out["all_present"] = r.all_present();
            out["any_binding_error"] = r.any_binding_error();
            return out;
        },
        py::arg("image"), py::arg("vocab"), py::arg("prompt"),
        "Run the oracle detector on an image for a prompt");

    m.def(
        "benchmark_prompts",
        [](const std::string& kind, uint64_t seed, int seeds_per_prompt) {
            Vocabulary vocab = Vocabulary::toy_world();
            std::vector<std::string> shapes, colors;
            for (int id : vocab.subject_tokens)
                shapes.push_back(vocab.tokens[id]);
            for (int id : vocab.attribute_tokens)
                colors.push_back(vocab.tokens[id]);
            Rng rng(seed);
            BenchmarkSuite s =
                build_benchmark(shapes, shapes, colors,
                                subset_kind_from_name(kind), rng,
                                seeds_per_prompt);
            py::list out;
            for (const BenchPrompt& p : s.prompts)
                out.append(py::make_tuple(p.text, p.sub_a, p.sub_b));
            return out;
        },
        py::arg("kind") = "subject-subject", py::arg("seed") = 0,
        py::arg("seeds_per_prompt") = 64,
        "Prompt list (text, sub_a, sub_b) for one benchmark subset");

    m.def(
        "oracle_similarities",
        [](const std::vector<py::array_t<
               double, py::array::c_style | py::array::forcecast>>& arrays,
           const Vocabulary& vocab, const std::string& prompt_text) {
            std::vector<Image> images;
            for (const auto& a : arrays) images.push_back(array_to_image(a));
            auto backend = oracle_backend(vocab);
            auto templates = default_templates();
            auto [sub_a, sub_b] = split_prompt(vocab, prompt_text);
            BenchPrompt bp{prompt_text, sub_a, sub_b};
            py::dict out;
            out["full"] = full_prompt_similarity(images, prompt_text,
                                                 *backend, templates);
            out["min_object"] =
                min_object_similarity(images, bp, *backend, templates);
            out["max_object"] =
                max_object_similarity(images, bp, *backend, templates);
            out["text_text"] = text_text_similarity(images, prompt_text,
                                                    *backend, templates);
            return out;
        },
        py::arg("images"), py::arg("vocab"), py::arg("prompt"),
        "Oracle-backend similarity metrics for a two-subject prompt");

    m.def(
        "neglect_rate",
        [](const std::vector<py::array_t<
               double, py::array::c_style | py::array::forcecast>>& arrays,
           const Vocabulary& vocab, const std::vector<std::string>& prompts) {
            std::vector<Image> images;
            std::vector<TokenPrompt> ps;
            for (const auto& a : arrays) images.push_back(array_to_image(a));
            for (const std::string& t : prompts)
                ps.push_back(encode_prompt(vocab, t));
            NeglectStats s = neglect_rate(images, ps, vocab);
            py::dict out;
            out["neglect_rate"] = s.neglect_rate;
            out["binding_error_rate"] = s.binding_error_rate;
            out["runs"] = s.runs;
            out["neglected"] = s.neglected;
            out["binding_errors"] = s.binding_errors;
            return out;
        },
        py::arg("images"), py::arg("vocab"), py::arg("prompts"));

    m.def(
        "paired_ttest",
        [](const std::vector<double>& a, const std::vector<double>& b) {
            PairedTest r = paired_ttest(a, b);
            return py::make_tuple(r.t, r.df, r.p_two_sided, r.mean_diff);
        },
        py::arg("a"), py::arg("b"),
        "Two-sided paired t-test: (t, df, p, mean_diff)");

    m.def(
        "gaussian_kernel",
        [](int size, double sigma) {
            return SmoothingKernel{size, sigma}.matrix();
        },
        py::arg("size") = 3, py::arg("sigma") = 0.5);

    m.def(
        "write_png",
        [](const std::string& path,
           const py::array_t<double, py::array::c_style |
                                         py::array::forcecast>& img) {
            write_png(path, array_to_image(img));
        },
        py::arg("path"), py::arg("image"));

    m.def(
        "heatmap",
        [](const Eigen::MatrixXd& map, int upsample) {
            return image_to_array(heatmap_image(map, upsample));
        },
        py::arg("map"), py::arg("upsample") = 8,
        "Colormapped attention map as an (H, W, 3) array in [-1, 1]");
}
