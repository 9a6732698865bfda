#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "diffbody/body_model.hpp"
#include "diffbody/diffusion.hpp"
#include "diffbody/image.hpp"
#include "diffbody/losses.hpp"
#include "diffbody/regions.hpp"
#include "json.hpp"

namespace diffbody::refinement {

using diffusion::Backend;
using diffusion::LatentMap;
using diffusion::TextEmbedding;
using geometry::Warning;

enum class GradientMode { Auto, Analytic, FiniteDifference };

struct RefinementConfig {
    double noise_strength = 0.30;
    int iterations = 100;  // 0 is accepted by the stage functions as "skip"
    int reinit_period = 5;
    double lr_min = 4.0e-4;
    double lr_max = 5.0e-4;
    int warmup_steps = 10;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    bool optimize = true;
    GradientMode gradient = GradientMode::Auto;
    int fd_directions = 16;
    double fd_step = 1e-3;
    double guidance_scale = 1.0;
    losses::LossWeights weights;
    bool shape_edit = false;
    std::uint64_t seed = 0;
    bool keep_iterates = false;

    // Throws ConfigError naming the offending field.
    void validate() const;
};

// Linear warmup to lr_max over warmup_steps, then cosine decay to lr_min at
// step `iterations`. Steps are 1-based.
double learning_rate(const RefinementConfig& cfg, int step);

// Adam moments; persists across input reinitialisation.
struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    int updates = 0;
};

// One Adam update at learning_rate(cfg, step). A non-finite or mis-sized
// gradient leaves the embedding and state untouched and appends a warning.
TextEmbedding optimize_embedding(const TextEmbedding& embedding, const TextEmbedding& gradient, int step,
                                 const RefinementConfig& cfg, AdamState& state,
                                 std::vector<Warning>* warnings = nullptr);

// A latent cell is masked iff any pixel it covers is masked.
Mask latent_mask(const Mask& pixel_mask, int factor);

struct RefineRequest {
    Image input;
    Mask mask;
    TextEmbedding embedding;
    Keypoints keypoints;
    std::optional<LabelMap> part_layout;
    diffusion::Stage stage = diffusion::Stage::Body;
};

struct RefineOutcome {
    Image output;
    LatentMap final_latent;
    diffusion::RefineTrace trace;
    std::optional<Warning> warning;
};

// Called after each reverse step with the blended latent at t (the step
// just produced), the forward trajectory and the latent mask.
using StepObserver = std::function<void(int t, const LatentMap& latent, const diffusion::NoiseTrajectory& trajectory,
                                        const Mask& latent_mask)>;

// Masked blended denoising: noise the encoded input to round(strength T),
// run the reverse chain and after every step restore cells outside the mask
// from the forward trajectory at the same t. Pixels outside the mask are
// copied from the input after decoding. All draws come from `seed`.
RefineOutcome refine_once(const RefineRequest& request, const RefinementConfig& cfg, const Backend& backend,
                          std::uint64_t seed, const StepObserver* observer = nullptr);

struct StageLossValue {
    losses::Breakdown breakdown;
    std::optional<Raster> image_grad;
};

class StageLoss {
public:
    virtual ~StageLoss() = default;
    virtual StageLossValue evaluate(const Image& output, bool want_grad) const = 0;
};

struct IterationRecord {
    int index = 0;  // 1-based
    std::vector<losses::Component> components;
    double total = 0.0;
    int embedding_id = 0;  // snapshot used to produce this iterate
    double learning_rate = 0.0;
    std::string gradient;  // analytic, finite_difference, skipped or none
    std::optional<Image> output;
};

struct BlockResult {
    Image best;
    int best_index = 0;
    std::vector<IterationRecord> records;
    std::vector<TextEmbedding> embeddings;  // [0] initial, [i] after update i
    std::vector<Warning> warnings;
};

struct BlockHooks {
    std::function<void(int iteration, const Image& input)> on_input;
    const StepObserver* step = nullptr;
};

struct BlockContext {
    std::optional<LabelMap> part_layout;
    diffusion::Stage stage = diffusion::Stage::Body;
};

// Iterates refine -> evaluate -> embedding update for cfg.iterations rounds,
// restarting from `initial` after every reinit_period-th round, and returns
// the lowest-total iterate (earliest on ties). Requires iterations >= 1.
// Errors are rethrown with the iteration index prefixed.
BlockResult run_block(const Image& initial, const Mask& mask, const TextEmbedding& embedding0,
                      const Keypoints& keypoints, const StageLoss& loss, const RefinementConfig& cfg,
                      const Backend& backend, const BlockContext& context = {}, const BlockHooks* hooks = nullptr);

// L = w_aw AW(pose(out), pose(rendered)) + w_clip CLIP_parts(reference, out).
class FullbodyLoss final : public StageLoss {
public:
    FullbodyLoss(const Backend& backend, const Image& rendered, const Keypoints& keypoints, const Image& reference,
                 const LabelMap& reference_labels, const LabelMap& part_labels, const losses::LossWeights& weights);
    StageLossValue evaluate(const Image& output, bool want_grad) const override;

private:
    const Backend& backend_;
    Keypoints keypoints_;
    Heatmap target_;
    Image reference_;
    LabelMap reference_labels_;
    LabelMap part_labels_;
    losses::LossWeights weights_;
};

// L = w_id ID + w_clip CLIP + w_kp Keypoint against the reference face and
// the rendered face's landmarks.
class FaceLoss final : public StageLoss {
public:
    FaceLoss(const Backend& backend, const Image& reference_face, const Image& rendered_face, bool shape_edit,
             const losses::LossWeights& weights);
    StageLossValue evaluate(const Image& output, bool want_grad) const override;

private:
    const Backend& backend_;
    Image reference_face_;
    Keypoints target_landmarks_;
    bool shape_edit_;
    losses::LossWeights weights_;
};

struct FullbodyInputs {
    Image rendered;
    Mask invisible_mask;
    std::string prompt;
    Keypoints keypoints;
    Image reference;
    LabelMap reference_labels;
    LabelMap part_labels;  // of the rendered image
};

struct StageResult {
    Image output;
    std::optional<BlockResult> block;
    std::vector<Warning> warnings;
};

StageResult step1_fullbody(const FullbodyInputs& in, const RefinementConfig& cfg, const Backend& backend,
                           const BlockHooks* hooks = nullptr);

struct FaceInputs {
    Image step1_output;
    LabelMap part_labels;
    std::string prompt;
    Image reference_face;  // any size; resampled to the crop size
    Image rendered;        // full rendered image; cropped at the same placement
    int crop_size = geometry::kFaceCropSize;
    double crop_margin = geometry::kDefaultCropMargin;
};

struct FaceStageResult {
    Image output;  // final composite
    std::optional<BlockResult> block;
    std::optional<geometry::Placement> placement;
    Image crop_input;
    Image crop_refined;
    Mask interior;
    std::vector<Warning> warnings;
    bool skipped = false;
};

// Crops the face, refines it with the border band frozen and blends it back.
// Without face pixels the stage is skipped with a warning.
FaceStageResult step2_face(const FaceInputs& in, const RefinementConfig& cfg, const Backend& backend,
                           const BlockHooks* hooks = nullptr);

nlohmann::json to_json(const RefinementConfig& cfg);
RefinementConfig config_from_json(const nlohmann::json& j, RefinementConfig base = {});
nlohmann::json to_json(const BlockResult& block);

}  // namespace diffbody::refinement
