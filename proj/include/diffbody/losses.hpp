#pragma once

#include <optional>
#include <string>
#include <vector>

#include "diffbody/diffusion.hpp"
#include "diffbody/image.hpp"

namespace diffbody::losses {

// Adaptive-wing parameters.
struct AwParams {
    double alpha = 2.1;
    double omega = 14.0;
    double epsilon = 1.0;
    double theta = 0.5;
};

// Per-element adaptive-wing penalty for prediction p against target y, and
// its derivative in p.
double aw_element(double p, double y, const AwParams& prm = {});
double aw_element_grad(double p, double y, const AwParams& prm = {});

// Mean over every joint plane and cell. Throws InvalidArgument on shape mismatch.
double aw_loss(const Heatmap& pred, const Heatmap& target, const AwParams& prm = {});
std::vector<double> aw_loss_grad(const Heatmap& pred, const Heatmap& target, const AwParams& prm = {});

struct ValueGrad {
    double value = 0.0;
    std::optional<Raster> grad;  // d value / d image, when requested and available
};

// Negative cosine similarity summed over body parts present in both images.
// Each part crop keeps only that part's pixels inside its bounding box,
// resampled to crop_size. Throws InvalidArgument when no part is shared.
inline constexpr int kPartCropSize = 32;
ValueGrad clip_part_loss(const Image& reference, const LabelMap& reference_labels, const Image& output,
                         const LabelMap& output_labels, const diffusion::Embedder& embedder, bool want_grad = false,
                         int crop_size = kPartCropSize);
// Single-region form: -phi(reference) . phi(output).
ValueGrad clip_image_loss(const Image& reference, const Image& output, const diffusion::Embedder& embedder,
                          bool want_grad = false);

// Mean over points present in both sets of the squared coordinate error,
// averaged over the two coordinates. Throws InvalidArgument on a count
// mismatch or when no point is shared.
double keypoint_loss(const Keypoints& pred, const Keypoints& target);
std::vector<Vec2> keypoint_loss_grad(const Keypoints& pred, const Keypoints& target);

// 1 - cos(id(reference), id(output)).
ValueGrad id_loss(const Image& reference_face, const Image& output_face, const diffusion::Embedder& embedder,
                  bool want_grad = false);

struct LossWeights {
    double aw = 0.002;
    double clip_body = 2.0;
    double id = 10.0;
    double clip_face = 10.0;
    double keypoint = 0.1;
    // Face CLIP and ID weights when the body shape is edited.
    double shape_edit_face = 5.0;
};

struct Component {
    std::string name;
    double value = 0.0;
    double weight = 0.0;
};

struct Breakdown {
    std::vector<Component> components;
    double total = 0.0;
};

Breakdown total_fullbody(double aw, double clip, const LossWeights& w = {});
Breakdown total_face(double id, double clip, double keypoint, bool shape_edit, const LossWeights& w = {});

}  // namespace diffbody::losses
