#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "diffbody/body_model.hpp"
#include "diffbody/diffusion.hpp"
#include "diffbody/fit_io.hpp"
#include "diffbody/metrics.hpp"
#include "diffbody/refinement.hpp"
#include "diffbody/regions.hpp"
#include "diffbody/render.hpp"
#include "diffbody/texture.hpp"
#include "json.hpp"

namespace diffbody::pipeline {

// Edit target. Unset fields keep the fitted value; `keypoints` (pixels in
// the render frame) take precedence over `pose`.
struct TargetSpec {
    std::optional<std::vector<double>> pose;
    std::optional<Keypoints> keypoints;
    std::optional<double> height_m;
    std::optional<double> weight_kg;
};

inline constexpr const char* kToyReference = "toy";
inline constexpr const char* kToyFit = "toy-fit";

struct PipelineConfig {
    std::string backend = "toy";
    std::map<std::string, double> backend_options;
    std::string reference = kToyReference;  // PNG path or "toy"
    std::string reference_mask;             // optional silhouette PNG for file references
    std::string fit = kToyFit;              // fit JSON path or "toy-fit"
    std::string target_image;               // optional ground truth for metrics
    int toy_height = 256;
    int toy_width = 256;
    std::optional<std::vector<double>> toy_pose;  // overrides the toy subject's seeded pose
    TargetSpec target;
    refinement::RefinementConfig stage1;
    refinement::RefinementConfig stage2;
    int face_crop_size = geometry::kFaceCropSize;
    double crop_margin = geometry::kDefaultCropMargin;
    int pad_band = geometry::kDefaultPadBand;
    double background = geometry::kDefaultBackground;
    std::string token = "sks";
    std::string body_noun = "man";
    std::string face_noun = "face";
    std::filesystem::path output_dir = "out";
    std::uint64_t seed = 0;
    bool stage1_only = false;

    // Throws ConfigError.
    void validate() const;
};

// Accepts either a config object or a run manifest (its "config" echo).
// Relative paths resolve against `base_dir`.
PipelineConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
nlohmann::json to_json(const PipelineConfig& cfg);
PipelineConfig load_config(const std::filesystem::path& path);

// Procedurally textured toy subject with known ground truth. The appearance
// is attached to the body surface (rest-pose coordinates of the subject), so
// any re-posed render of the same subject is an exact target image.
struct ToyScene {
    geometry::BodyParams params;
    Camera camera;
    geometry::RenderResult render;
    Keypoints joints;
    std::uint64_t seed = 0;
};

ToyScene make_toy_scene(const geometry::BodyModel& model, int height, int width, std::uint64_t seed,
                        double background = geometry::kDefaultBackground,
                        const std::optional<std::vector<double>>& pose = std::nullopt);
// The toy subject's appearance shaded onto `mesh` (same topology as the
// subject's body).
geometry::RenderResult render_toy_appearance(const geometry::BodyModel& model, const ToyScene& scene,
                                             const geometry::TexturedMesh& mesh, const Camera& camera, int height,
                                             int width, double background = geometry::kDefaultBackground);

// Everything up to (and including) the render of the edited body.
struct Prepared {
    std::shared_ptr<const diffusion::Backend> base_backend;
    std::shared_ptr<const diffusion::Backend> backend;  // personalized
    std::shared_ptr<const geometry::BodyModel> model;
    std::optional<ToyScene> scene;
    Image reference;
    Mask reference_silhouette;
    LabelMap reference_labels;
    Image padded_reference;
    geometry::Fit fit;
    geometry::TexturedMesh textured;  // fitted mesh with uv + visibility
    geometry::BodyParams edited;
    geometry::TexturedMesh edited_mesh;
    geometry::RenderResult rendered;
    Keypoints keypoints;
    std::string prompt_body;
    std::string prompt_face;
    std::string orientation;
    bool shape_edit = false;
    Image reference_face;  // empty without a face in the reference
    std::optional<Image> ground_truth;
    std::vector<geometry::Warning> warnings;
};

Prepared prepare(const PipelineConfig& cfg);

struct EditResult {
    Prepared prepared;
    refinement::StageResult step1;
    std::optional<refinement::FaceStageResult> step2;
    Image final_image;
    double wall_time_s = 0.0;
};

// Runs the whole chain without touching the filesystem (beyond inputs).
EditResult run_edit(const PipelineConfig& cfg);

// Runs the chain and writes final.png, step1/, step2/, masks/ and
// manifest.json under cfg.output_dir. A stale final.png is removed first and
// the final image and manifest are written atomically at the end. Errors are
// rethrown with the failing stage's name.
nlohmann::json edit(const PipelineConfig& cfg);

// Writes rendered.png, the masks and keypoints.json only.
nlohmann::json render_only(const PipelineConfig& cfg);

std::vector<double> default_noise_strengths();

struct SweepRow {
    double strength = 0.0;
    metrics::MetricReport report;
};

// One refinement iteration of the fullbody stage per strength, scored
// against the ground-truth target. Throws ConfigError on an empty or
// out-of-range list, or when no ground truth is available.
std::vector<SweepRow> sweep_noise(const PipelineConfig& cfg, const std::vector<double>& strengths);

struct AblationFlags {
    bool opt = true;
    bool iterate = true;
    bool reset = true;
};

refinement::RefinementConfig apply_ablation(refinement::RefinementConfig cfg, const AblationFlags& flags);
std::string ablation_label(const AblationFlags& flags);
// The four rows of the ablation table, weakest first.
std::vector<AblationFlags> default_ablation_rows();

struct AblationRow {
    AblationFlags flags;
    metrics::MetricReport report;
    double step1_best_loss = 0.0;
    double step2_best_loss = 0.0;
    int step1_records = 0;
};

std::vector<AblationRow> ablate(const PipelineConfig& cfg, const std::vector<AblationFlags>& rows);

// Metrics of a finished edit against its ground truth (PSNR, SSIM, ID on
// the face crop, heatmap L2 at the edited keypoints).
metrics::MetricReport score(const EditResult& result, const Image& ground_truth, const std::string& label);

struct EvaluationPair {
    std::filesystem::path generated;
    std::filesystem::path target;
    std::filesystem::path reference;  // optional; enables the ID column
};

// Per-pair rows followed by the mean row. Unreadable files produce an error
// row and evaluation continues. Throws ConfigError on an empty list.
std::vector<metrics::MetricReport> evaluate(const std::vector<EvaluationPair>& pairs, const diffusion::Backend& backend);

}  // namespace diffbody::pipeline
