#include "diffbody/regions.hpp"

#include <algorithm>
#include <cmath>

#include "diffbody/error.hpp"
#include "diffbody/mesh.hpp"

namespace diffbody::geometry {

int face_border_width(int w) { return w / 5; }

Mask face_border_mask(int h, int w) {
    if (h <= 0 || w <= 0) throw InvalidArgument("face_border_mask needs positive size");
    const int border = face_border_width(w);
    Mask m(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const int d = std::min({x, y, w - 1 - x, h - 1 - y});
            m.at(y, x) = d >= border ? 1 : 0;
        }
    return m;
}

Box part_box(const LabelMap& labels, int part, double margin) {
    int x0 = labels.width(), y0 = labels.height(), x1 = -1, y1 = -1;
    for (int y = 0; y < labels.height(); ++y)
        for (int x = 0; x < labels.width(); ++x)
            if (labels.at(y, x) == part) {
                x0 = std::min(x0, x);
                y0 = std::min(y0, y);
                x1 = std::max(x1, x);
                y1 = std::max(y1, y);
            }
    if (x1 < 0)
        throw GeometryError(std::string("part '") + part_name(part) + "' (label " + std::to_string(part) +
                            ") not present in label map");
    const double cx = (x0 + x1 + 1) / 2.0, cy = (y0 + y1 + 1) / 2.0;
    const double side = std::max(x1 - x0 + 1, y1 - y0 + 1) * (1.0 + 2.0 * margin);
    const int bx0 = std::max(0, static_cast<int>(std::floor(cx - side / 2)));
    const int by0 = std::max(0, static_cast<int>(std::floor(cy - side / 2)));
    const int bx1 = std::min(labels.width(), static_cast<int>(std::ceil(cx + side / 2)));
    const int by1 = std::min(labels.height(), static_cast<int>(std::ceil(cy + side / 2)));
    return {bx0, by0, bx1 - bx0, by1 - by0};
}

Image crop_with(const Image& image, const Placement& placement) {
    if (image.height() != placement.source_height || image.width() != placement.source_width)
        throw GeometryError("crop placement does not match image shape");
    LinearSampler s(image.height(), image.width(), placement.box, placement.out_height, placement.out_width);
    return Image::clamped(s.apply(image));
}

Crop crop_part(const Image& image, const LabelMap& labels, int part, int out_size, double margin) {
    if (labels.height() != image.height() || labels.width() != image.width())
        throw GeometryError("label map shape does not match image");
    if (out_size <= 0) throw InvalidArgument("crop size must be positive");
    Placement pl{part_box(labels, part, margin), out_size, out_size, image.height(), image.width()};
    return {crop_with(image, pl), pl};
}

LabelMap crop_labels(const LabelMap& labels, const Placement& placement) {
    LabelMap out(placement.out_height, placement.out_width);
    const Box& b = placement.box;
    for (int y = 0; y < placement.out_height; ++y)
        for (int x = 0; x < placement.out_width; ++x) {
            const int sy = b.y + std::min(b.height - 1, static_cast<int>((y + 0.5) * b.height / placement.out_height));
            const int sx = b.x + std::min(b.width - 1, static_cast<int>((x + 0.5) * b.width / placement.out_width));
            out.at(y, x) = labels.at(sy, sx);
        }
    return out;
}

Image uncrop(const Image& crop, const Placement& placement) {
    if (crop.height() != placement.out_height || crop.width() != placement.out_width)
        throw GeometryError("crop does not match its placement");
    return resize_bilinear(crop, placement.box.height, placement.box.width);
}

Mask uncrop_mask(const Mask& crop_mask, const Placement& placement) {
    const Box& b = placement.box;
    Mask out(b.height, b.width);
    for (int y = 0; y < b.height; ++y)
        for (int x = 0; x < b.width; ++x) {
            const int sy = std::min(placement.out_height - 1, static_cast<int>((y + 0.5) * placement.out_height / b.height));
            const int sx = std::min(placement.out_width - 1, static_cast<int>((x + 0.5) * placement.out_width / b.width));
            out.at(y, x) = crop_mask.at(sy, sx);
        }
    return out;
}

}  // namespace diffbody::geometry
