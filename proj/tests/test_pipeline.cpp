#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "diffbody/error.hpp"
#include "diffbody/image_io.hpp"
#include "diffbody/pipeline.hpp"
#include "diffbody/toy_backend.hpp"
#include "support.hpp"

using namespace diffbody;
using namespace diffbody::pipeline;
using testing_support::TempDir;
namespace fs = std::filesystem;

namespace {

PipelineConfig small_config(int iterations = 2) {
    PipelineConfig c;
    c.toy_height = c.toy_width = 64;
    c.face_crop_size = 64;
    c.stage1.iterations = iterations;
    c.stage2.iterations = iterations;
    c.seed = 5;
    return c;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

double mean_abs_in(const Image& a, const Image& b, const Mask& m) {
    double s = 0;
    int n = 0;
    for (int y = 0; y < a.height(); ++y)
        for (int x = 0; x < a.width(); ++x)
            if (m.at(y, x))
                for (int c = 0; c < a.channels(); ++c) {
                    s += std::abs(a.at(y, x, c) - b.at(y, x, c));
                    ++n;
                }
    return n ? s / n : 0.0;
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(DIFFBODY_CLI) + " " + args + " >/dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

void write_json(const fs::path& p, const nlohmann::json& j) { std::ofstream(p) << j.dump(2); }

}  // namespace

TEST_CASE("pipeline config json") {
    TempDir dir("cfg");
    PipelineConfig c = small_config(3);
    c.target.height_m = 1.8;
    c.target.pose = std::vector<double>(geometry::make_toy_body_model()->pose_dim(), 0.1);
    c.backend_options["detail_std"] = 0.03;
    c.stage1.noise_strength = 0.4;
    c.output_dir = dir.path() / "out";
    const auto j = to_json(c);
    CHECK(to_json(config_from_json(j)) == j);
    // A manifest carries the config under "config".
    CHECK(to_json(config_from_json({{"status", "ok"}, {"config", j}})) == j);

    write_json(dir.path() / "c.json", {{"target_image", "gt.png"}, {"output_dir", "run"}, {"toy_size", {32, 48}}});
    const auto loaded = load_config(dir.path() / "c.json");
    CHECK(fs::path(loaded.target_image) == dir.path() / "gt.png");
    CHECK(loaded.output_dir == dir.path() / "run");
    CHECK(loaded.toy_height == 32);
    CHECK(loaded.toy_width == 48);

    CHECK_THROWS_AS(config_from_json({{"seeed", 1}}), ConfigError);
    CHECK_THROWS_AS(config_from_json({{"target", {{"hieght_m", 1}}}}), ConfigError);
    CHECK_THROWS_AS(config_from_json({{"stage1", {{"iterations", -1}}}}), ConfigError);
    CHECK_THROWS_AS(config_from_json({{"toy_size", {30, 64}}}).validate(), ConfigError);
    CHECK_THROWS_AS(load_config(dir.path() / "missing.json"), ConfigError);
}

TEST_CASE("invalid backend names the registry") {
    PipelineConfig c = small_config();
    c.backend = "stable-diffusion";
    try {
        (void)prepare(c);
        FAIL("expected a throw");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("toy") != std::string::npos);
    }
}

TEST_CASE("identity edit round trip and determinism") {
    const PipelineConfig c = small_config();
    const auto a = run_edit(c);
    REQUIRE(a.step2.has_value());
    CHECK_FALSE(a.step2->skipped);
    CHECK(mean_abs_in(a.final_image, a.prepared.reference, a.prepared.reference_silhouette) < 0.05);
    CHECK_FALSE(a.prepared.shape_edit);
    const auto b = run_edit(c);
    CHECK(a.final_image == b.final_image);
    CHECK(refinement::to_json(*a.step1.block) == refinement::to_json(*b.step1.block));
}

TEST_CASE("refinement pulls the invisible region toward the part colours") {
    PipelineConfig c = small_config(4);
    c.toy_height = c.toy_width = 128;
    c.stage1_only = true;
    auto pose = geometry::make_toy_body_model()->default_params().pose;
    using J = geometry::ToyBodyModel::PoseJoint;
    pose[3 * J::LShoulder + 2] = -0.6;
    pose[3 * J::LElbow + 0] = -1.8, pose[3 * J::LElbow + 1] = 0.4, pose[3 * J::LElbow + 2] = -0.8;
    c.toy_pose = pose;
    c.target.pose = geometry::make_toy_body_model()->default_params().pose;
    const auto r = run_edit(c);
    const Mask& inv = r.prepared.rendered.invisible_mask;
    REQUIRE(inv.count() > 50);
    const auto* toy = dynamic_cast<const diffusion::ToyBackend*>(r.prepared.backend.get());
    REQUIRE(toy);
    REQUIRE(toy->reference());
    const auto& stats = *toy->reference();
    // Only labels seen in the reference have a mean to contract to.
    Image means = r.prepared.rendered.image;
    Mask judged(128, 128);
    const LabelMap& labels = r.prepared.rendered.part_labels;
    for (int y = 0; y < 128; ++y)
        for (int x = 0; x < 128; ++x) {
            const int l = labels.at(y, x);
            if (!inv.at(y, x) || !stats.part_present.at(l)) continue;
            judged.at(y, x) = 1;
            for (int k = 0; k < 3; ++k) means.at(y, x, k) = stats.part_mean[l][k];
        }
    REQUIRE(judged.count() > 50);
    CHECK(mean_abs_in(r.step1.output, means, judged) < mean_abs_in(r.prepared.rendered.image, means, judged));
}

TEST_CASE("noise sweep") {
    PipelineConfig c = small_config();
    const auto rows = sweep_noise(c, default_noise_strengths());
    REQUIRE(rows.size() == 9);
    for (int i = 0; i < 9; ++i) {
        CHECK(rows[i].strength == doctest::Approx(0.1 * (i + 1)));
        CHECK(rows[i].report.label == std::to_string(10 * (i + 1)) + "%");
        CHECK(rows[i].report.psnr.has_value());
        CHECK(rows[i].report.ssim.has_value());
        CHECK(rows[i].report.heatmap_l2.has_value());
    }
    CHECK_THROWS_AS(sweep_noise(c, {}), ConfigError);
    CHECK_THROWS_AS(sweep_noise(c, {0.3, 1.5}), ConfigError);
}

TEST_CASE("ablation rows") {
    CHECK(ablation_label({}) == "ours");
    CHECK(ablation_label({false, true, false}) == "w/o opt & reset");
    CHECK(default_ablation_rows().size() == 4);
    refinement::RefinementConfig base;
    CHECK(apply_ablation(base, {true, false, true}).iterations == 1);
    CHECK_FALSE(apply_ablation(base, {false, true, true}).optimize);
    CHECK(apply_ablation(base, {true, true, false}).reinit_period > base.iterations);

    PipelineConfig c = small_config(3);
    const auto rows = ablate(c, {{}, {true, false, true}});
    REQUIRE(rows.size() == 2);
    CHECK(rows[1].step1_records == 1);
    CHECK(rows[0].step1_records == 3);
    const auto e = run_edit(c);
    const auto m = score(e, *e.prepared.ground_truth, "ours");
    CHECK(rows[0].report.psnr->db == m.psnr->db);
    CHECK(*rows[0].report.ssim == *m.ssim);
    CHECK(*rows[0].report.heatmap_l2 == *m.heatmap_l2);
    CHECK(*rows[0].report.id == *m.id);
    CHECK_THROWS_AS(ablate(c, {}), ConfigError);
}

TEST_CASE("evaluate over files") {
    TempDir dir("eval");
    const auto backend = diffusion::create_backend("toy");
    const Image a = testing_support::random_image(32, 32, 3, 1);
    write_png(dir.path() / "a.png", a);
    std::vector<EvaluationPair> pairs{{dir.path() / "a.png", dir.path() / "a.png", {}}};
    for (int k = 0; k < 3; ++k) {
        Image g = a;
        for (double& v : g.data()) v = std::clamp(v + 0.05 * (k + 1) * std::sin(17.0 * v + k), 0.0, 1.0);
        const auto gp = dir.path() / ("g" + std::to_string(k) + ".png");
        write_png(gp, g);
        pairs.push_back({gp, dir.path() / "a.png", dir.path() / "a.png"});
    }
    pairs.push_back({dir.path() / "missing.png", dir.path() / "a.png", {}});
    const auto rows = evaluate(pairs, *backend);
    REQUIRE(rows.size() == pairs.size() + 1);
    CHECK(rows[0].psnr->infinite);
    CHECK(*rows[0].ssim == doctest::Approx(1.0));
    CHECK(*rows[0].heatmap_l2 == 0.0);
    const Image at = read_png(dir.path() / "a.png");
    const auto& pose = backend->pose_estimator();
    for (int k = 0; k < 3; ++k) {
        const Image g = read_png(pairs[k + 1].generated);
        const auto& r = rows[k + 1];
        CHECK(r.error.empty());
        CHECK(r.psnr->db == metrics::psnr(g, at).db);
        CHECK(*r.ssim == metrics::ssim(g, at));
        CHECK(*r.heatmap_l2 == metrics::heatmap_l2(pose.estimate(g, nullptr), pose.estimate(at, nullptr)));
        CHECK(*r.id == metrics::id_metric(g, at, backend->identity_embedder()));
    }
    CHECK_FALSE(rows[4].error.empty());
    CHECK(rows.back().label == "mean");
    CHECK(rows.back().psnr->infinite);
    CHECK_THROWS_AS(evaluate({}, *backend), ConfigError);
}

TEST_CASE("edit artifacts and manifest re-run") {
    TempDir dir("edit");
    PipelineConfig c = small_config();
    c.output_dir = dir.path() / "first";
    const auto manifest = edit(c);
    CHECK(manifest["status"] == "ok");
    for (const char* f : {"final.png", "manifest.json", "step1/rendered.png", "step1/output.png", "step1/keypoints.json",
                          "masks/invisible.png", "masks/part_labels.png", "step2/crop_refined.png", "edited_mesh.obj"})
        CHECK_MESSAGE(fs::exists(c.output_dir / f), f);

    auto again = load_config(c.output_dir / "manifest.json");
    again.output_dir = dir.path() / "second";
    (void)edit(again);
    CHECK(slurp(dir.path() / "first/final.png") == slurp(dir.path() / "second/final.png"));
}

TEST_CASE("failed run leaves no final image") {
    TempDir dir("abort");
    PipelineConfig c = small_config();
    c.output_dir = dir.path();
    write_png(dir.path() / "final.png", Image(4, 4, 3, 0.5));
    c.target.pose = std::vector<double>{0.0, 0.0};
    try {
        (void)edit(c);
        FAIL("expected a throw");
    } catch (const GeometryError& e) {
        CHECK(std::string(e.what()).find("stage edit_params") != std::string::npos);
    }
    CHECK_FALSE(fs::exists(dir.path() / "final.png"));
    const auto m = nlohmann::json::parse(slurp(dir.path() / "manifest.json"));
    CHECK(m["status"] == "failed");
}

TEST_CASE("cli exit codes") {
    TempDir dir("cli");
    const auto d = dir.path();
    const nlohmann::json base = {{"toy_size", {64, 64}}, {"stage1", {{"iterations", 1}}}, {"stage1_only", true}};
    auto with = [&](const char* name, nlohmann::json extra) {
        nlohmann::json j = base;
        j.update(extra);
        write_json(d / name, j);
        return std::string("--config ") + (d / name).string() + " --out " + (d / "out").string();
    };
    CHECK(run_cli("edit " + with("ok.json", nlohmann::json::object())) == 0);
    CHECK(fs::exists(d / "out/final.png"));
    CHECK(run_cli("render-only " + with("ok.json", nlohmann::json::object())) == 0);
    CHECK(run_cli("edit " + with("bad.json", {{"frobnicate", 1}})) == 2);
    CHECK(run_cli("edit --backend nope " + with("ok.json", nlohmann::json::object())) == 2);
    CHECK(run_cli("") == 2);
    CHECK(run_cli("edit " + with("be.json", {{"backend_options", {{"detail_std", 1e300}}}})) == 3);
    CHECK(run_cli("edit " + with("geo.json", {{"target", {{"pose", {0, 0}}}}})) == 4);
    CHECK(run_cli("sweep-noise --strengths 0.2,0.4 " + with("ok.json", nlohmann::json::object())) == 0);
    CHECK(nlohmann::json::parse(slurp(d / "out/sweep.json")).size() >= 1);
    CHECK(run_cli("sweep-noise --strengths 1.4 " + with("ok.json", nlohmann::json::object())) == 2);
}
