// diffbody: edit a person's pose and shape from a single reference image.
#include <fstream>
#include <future>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "diffbody/error.hpp"
#include "diffbody/image_io.hpp"
#include "diffbody/pipeline.hpp"
#include "diffbody/toy_backend.hpp"

using namespace diffbody;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kBackend = 3, kGeometry = 4 };

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string backend;
    std::string out;
    bool stage1_only = false;
    std::string targets;
};

void add_common(CLI::App* cmd, Common& c, const char* targets_help = nullptr) {
    cmd->add_option("--config", c.config, "Config JSON (or a previous run's manifest.json)");
    cmd->add_option("--seed", c.seed, "Overrides the config seed");
    cmd->add_option("--backend", c.backend, "Backend id");
    cmd->add_option("--out", c.out, "Output directory");
    cmd->add_flag("--stage1-only", c.stage1_only, "Skip facial refinement");
    if (targets_help) cmd->add_option("--targets", c.targets, targets_help);
}

pipeline::PipelineConfig build_config(const Common& c) {
    pipeline::PipelineConfig cfg = c.config.empty() ? pipeline::PipelineConfig{} : pipeline::load_config(c.config);
    if (c.seed) cfg.seed = *c.seed;
    if (!c.backend.empty()) cfg.backend = c.backend;
    if (!c.out.empty()) cfg.output_dir = c.out;
    if (c.stage1_only) cfg.stage1_only = true;
    return cfg;
}

json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read " + path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

std::vector<pipeline::PipelineConfig> target_configs(const pipeline::PipelineConfig& base, const std::string& path) {
    const json list = read_json(path);
    if (!list.is_array() || list.empty()) throw ConfigError("--targets must be a non-empty JSON array");
    std::vector<pipeline::PipelineConfig> out;
    for (std::size_t i = 0; i < list.size(); ++i) {
        json j = pipeline::to_json(base);
        j["target"] = list[i];
        pipeline::PipelineConfig c = pipeline::config_from_json(j, fs::path(path).parent_path());
        c.output_dir = base.output_dir / ("target_" + std::to_string(i));
        out.push_back(std::move(c));
    }
    return out;
}

int cmd_edit(const Common& c) {
    const auto cfg = build_config(c);
    if (c.targets.empty()) {
        const json m = pipeline::edit(cfg);
        std::cout << "wrote " << (cfg.output_dir / "final.png").string() << " (" << m["prompts"]["body"].get<std::string>()
                  << ")\n";
        return kOk;
    }
    const auto configs = target_configs(cfg, c.targets);
    const bool parallel = diffusion::create_backend(cfg.backend, cfg.backend_options)->concurrent_inference();
    std::vector<std::future<json>> jobs;
    for (const auto& tc : configs)
        jobs.push_back(std::async(parallel ? std::launch::async : std::launch::deferred, [tc] { return pipeline::edit(tc); }));
    int status = kOk;
    for (std::size_t i = 0; i < jobs.size(); ++i) {
        try {
            jobs[i].get();
            std::cout << "wrote " << (configs[i].output_dir / "final.png").string() << "\n";
        } catch (const Error& e) {
            std::cerr << "target " << i << ": " << e.what() << "\n";
            if (status == kOk) status = kFailure;
        }
    }
    return status;
}

int cmd_render_only(const Common& c) {
    const auto cfg = build_config(c);
    pipeline::render_only(cfg);
    std::cout << "wrote " << (cfg.output_dir / "step1" / "rendered.png").string() << "\n";
    return kOk;
}

int cmd_sweep(const Common& c, const std::vector<double>& strengths) {
    const auto cfg = build_config(c);
    const auto rows = pipeline::sweep_noise(cfg, strengths.empty() ? pipeline::default_noise_strengths() : strengths);
    std::vector<metrics::MetricReport> reports;
    json j = json::array();
    for (const auto& r : rows) {
        reports.push_back(r.report);
        j.push_back({{"strength", r.strength},
                     {"psnr", r.report.psnr ? json(r.report.psnr->infinite ? INFINITY : r.report.psnr->db) : json()},
                     {"ssim", r.report.ssim ? json(*r.report.ssim) : json()},
                     {"heatmap_l2", r.report.heatmap_l2 ? json(*r.report.heatmap_l2) : json()}});
    }
    std::cout << metrics::format_table(reports, "noise");
    fs::create_directories(cfg.output_dir);
    write_file_atomic(cfg.output_dir / "sweep.json", j.dump(2) + "\n");
    return kOk;
}

int cmd_ablate(const Common& c) {
    const auto cfg = build_config(c);
    const auto rows = pipeline::ablate(cfg, pipeline::default_ablation_rows());
    std::vector<metrics::MetricReport> reports;
    json j = json::array();
    for (const auto& r : rows) {
        reports.push_back(r.report);
        j.push_back({{"label", r.report.label},
                     {"step1_best_loss", r.step1_best_loss},
                     {"step2_best_loss", r.step2_best_loss},
                     {"step1_records", r.step1_records}});
    }
    std::cout << metrics::format_table(reports, "method");
    fs::create_directories(cfg.output_dir);
    write_file_atomic(cfg.output_dir / "ablation.json", j.dump(2) + "\n");
    return kOk;
}

int cmd_evaluate(const Common& c) {
    if (c.targets.empty()) throw ConfigError("evaluate needs --targets with a JSON array of image pairs");
    const auto cfg = build_config(c);
    const json list = read_json(c.targets);
    if (!list.is_array()) throw ConfigError("--targets must be a JSON array");
    const fs::path base = fs::path(c.targets).parent_path();
    auto path_of = [&](const json& p, const char* key) -> fs::path {
        if (!p.contains(key)) return {};
        const fs::path v = p[key].get<std::string>();
        return v.is_absolute() ? v : base / v;
    };
    std::vector<pipeline::EvaluationPair> pairs;
    for (const auto& p : list) {
        if (!p.is_object() || !p.contains("generated") || !p.contains("target"))
            throw ConfigError("each pair needs \"generated\" and \"target\"");
        pairs.push_back({path_of(p, "generated"), path_of(p, "target"), path_of(p, "reference")});
    }
    const auto backend = diffusion::create_backend(cfg.backend, cfg.backend_options);
    const auto rows = pipeline::evaluate(pairs, *backend);
    std::cout << metrics::format_table(rows, "pair");
    for (const auto& r : rows)
        if (!r.error.empty()) std::cerr << r.label << ": " << r.error << "\n";
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Pose and shape editing of a person image with diffusion-based refinement"};
    app.require_subcommand(1);
    Common c;
    std::vector<double> strengths;
    auto* edit = app.add_subcommand("edit", "Run the full edit and write its outputs");
    add_common(edit, c, "JSON file with an array of target specs, one run each");
    auto* render = app.add_subcommand("render-only", "Write the edited render, masks and keypoints");
    add_common(render, c);
    auto* sweep = app.add_subcommand("sweep-noise", "Single refinements over a list of noise strengths");
    add_common(sweep, c);
    sweep->add_option("--strengths", strengths, "Noise strengths in (0, 1]")->delimiter(',');
    auto* ablate = app.add_subcommand("ablate", "Ablation rows for opt, iterate and reset");
    add_common(ablate, c);
    auto* evaluate = app.add_subcommand("evaluate", "Metrics over (generated, target, reference) pairs");
    add_common(evaluate, c, "JSON file with an array of {generated, target, reference} pairs");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfig;
    }
    try {
        if (*edit) return cmd_edit(c);
        if (*render) return cmd_render_only(c);
        if (*sweep) return cmd_sweep(c, strengths);
        if (*ablate) return cmd_ablate(c);
        if (*evaluate) return cmd_evaluate(c);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfig;
    } catch (const BackendError& e) {
        std::cerr << "backend error: " << e.what() << "\n";
        return kBackend;
    } catch (const GeometryError& e) {
        std::cerr << "geometry error: " << e.what() << "\n";
        return kGeometry;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kFailure;
    }
    return kFailure;
}
