#include "diffbody/image.hpp"

#include <algorithm>
#include <cmath>

#include "diffbody/error.hpp"

namespace diffbody {

Raster::Raster(int height, int width, int channels, double fill)
    : height_(height), width_(width), channels_(channels) {
    if (height <= 0 || width <= 0 || channels <= 0)
        throw InvalidArgument("raster dimensions must be positive");
    data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
}

Image::Image(int height, int width, int channels, double fill) : Raster(height, width, channels, fill) {
    if (channels != 1 && channels != 3) throw InvalidArgument("image must have 1 or 3 channels");
}

Image Image::from_raster(const Raster& r) {
    Image img(r.height(), r.width(), r.channels());
    std::copy(r.data().begin(), r.data().end(), img.data().begin());
    if (!img.valid()) throw InvalidArgument("image values must be finite and within [0,1]");
    return img;
}

Image Image::clamped(const Raster& r) {
    Image img(r.height(), r.width(), r.channels());
    auto out = img.data();
    auto in = r.data();
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = std::isfinite(in[i]) ? std::clamp(in[i], 0.0, 1.0) : 0.0;
    return img;
}

bool Image::valid() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; });
}

Mask::Mask(int height, int width, std::uint8_t fill) : height_(height), width_(width) {
    if (height <= 0 || width <= 0) throw InvalidArgument("mask dimensions must be positive");
    data_.assign(static_cast<std::size_t>(height) * width, fill);
}

std::size_t Mask::count() const {
    return static_cast<std::size_t>(std::count_if(data_.begin(), data_.end(), [](auto v) { return v != 0; }));
}

bool is_binary(const Mask& m) {
    return std::all_of(m.data().begin(), m.data().end(), [](auto v) { return v == 0 || v == 1; });
}

LabelMap::LabelMap(int height, int width, int fill) : height_(height), width_(width) {
    if (height <= 0 || width <= 0) throw InvalidArgument("label map dimensions must be positive");
    data_.assign(static_cast<std::size_t>(height) * width, fill);
}

bool LabelMap::contains(int label) const { return std::find(data_.begin(), data_.end(), label) != data_.end(); }

Mask LabelMap::select(int label) const {
    Mask m(height_, width_);
    auto out = m.data();
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = data_[i] == label ? 1 : 0;
    return m;
}

Mask LabelMap::foreground() const {
    Mask m(height_, width_);
    auto out = m.data();
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = data_[i] != kBackgroundLabel ? 1 : 0;
    return m;
}

Heatmap::Heatmap(int joints, double fill) : joints_(joints) {
    if (joints <= 0) throw InvalidArgument("heatmap needs at least one joint");
    data_.assign(static_cast<std::size_t>(joints) * kResolution * kResolution, fill);
}

Keypoints flag_out_of_bounds(Keypoints pts, int height, int width) {
    for (auto& k : pts) {
        const auto& p = k.position;
        if (!(p.x >= 0.0 && p.x < width && p.y >= 0.0 && p.y < height)) k.confidence = 0.0;
    }
    return pts;
}

double luminance(const Image& img, int y, int x) {
    if (img.channels() == 1) return img.at(y, x, 0);
    return 0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) + 0.114 * img.at(y, x, 2);
}

}  // namespace diffbody
