#pragma once

#include "diffbody/image.hpp"
#include "diffbody/resample.hpp"

namespace diffbody::geometry {

// Returns 0 for pixels whose Manhattan distance to the nearest image border
// is below floor(0.2 * w), 1 elsewhere.
Mask face_border_mask(int h, int w);
int face_border_width(int w);

// Where a crop came from and what size it was resampled to.
struct Placement {
    Box box;  // in the source image
    int out_height = 0;
    int out_width = 0;
    int source_height = 0;
    int source_width = 0;

    bool operator==(const Placement&) const = default;
};

struct Crop {
    Image image;
    Placement placement;
};

inline constexpr int kFaceCropSize = 512;
inline constexpr double kDefaultCropMargin = 0.25;

// Square box around the part's tight bounds, widened by `margin` x side on
// each side, clipped to the image, resampled to out_size x out_size.
// Throws GeometryError naming the label if the part is absent.
Crop crop_part(const Image& image, const LabelMap& labels, int part, int out_size = kFaceCropSize,
               double margin = kDefaultCropMargin);
Box part_box(const LabelMap& labels, int part, double margin);

// Applies an existing placement to another raster of the same source shape.
Image crop_with(const Image& image, const Placement& placement);
LabelMap crop_labels(const LabelMap& labels, const Placement& placement);
// Resamples a crop back to its box size (does not composite).
Image uncrop(const Image& crop, const Placement& placement);
Mask uncrop_mask(const Mask& crop_mask, const Placement& placement);

}  // namespace diffbody::geometry
