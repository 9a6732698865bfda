#include "diffbody/resample.hpp"

#include <algorithm>
#include <cmath>

#include "diffbody/error.hpp"

namespace diffbody {

LinearSampler::LinearSampler(int src_height, int src_width, const Box& region, int out_height, int out_width)
    : src_h_(src_height), src_w_(src_width), out_h_(out_height), out_w_(out_width) {
    if (region.empty() || out_height <= 0 || out_width <= 0) throw InvalidArgument("empty resample region");
    if (region.x < 0 || region.y < 0 || region.x + region.width > src_width || region.y + region.height > src_height)
        throw InvalidArgument("resample region outside source");
    taps_.resize(static_cast<std::size_t>(out_height) * out_width);
    const double sy = static_cast<double>(region.height) / out_height;
    const double sx = static_cast<double>(region.width) / out_width;
    for (int oy = 0; oy < out_height; ++oy) {
        const double fy = std::clamp((oy + 0.5) * sy - 0.5, 0.0, region.height - 1.0);
        const int y0 = static_cast<int>(std::floor(fy));
        const int y1 = std::min(y0 + 1, region.height - 1);
        const double wy = fy - y0;
        for (int ox = 0; ox < out_width; ++ox) {
            const double fx = std::clamp((ox + 0.5) * sx - 0.5, 0.0, region.width - 1.0);
            const int x0 = static_cast<int>(std::floor(fx));
            const int x1 = std::min(x0 + 1, region.width - 1);
            const double wx = fx - x0;
            auto src = [&](int y, int x) {
                return static_cast<std::uint32_t>((region.y + y) * src_width + region.x + x);
            };
            taps_[static_cast<std::size_t>(oy) * out_width + ox] = {
                Tap{src(y0, x0), (1 - wy) * (1 - wx)}, Tap{src(y0, x1), (1 - wy) * wx},
                Tap{src(y1, x0), wy * (1 - wx)}, Tap{src(y1, x1), wy * wx}};
        }
    }
}

Raster LinearSampler::apply(const Raster& src, const Mask* gate) const {
    if (src.height() != src_h_ || src.width() != src_w_) throw InvalidArgument("sampler source shape mismatch");
    const int ch = src.channels();
    Raster out(out_h_, out_w_, ch);
    auto o = out.data();
    auto s = src.data();
    for (std::size_t i = 0; i < taps_.size(); ++i) {
        for (const Tap& t : taps_[i]) {
            if (t.weight == 0.0) continue;
            if (gate && gate->data()[t.src] == 0) continue;
            for (int c = 0; c < ch; ++c) o[i * ch + c] += t.weight * s[static_cast<std::size_t>(t.src) * ch + c];
        }
    }
    return out;
}

Raster LinearSampler::transpose(const Raster& cotangent, int channels, const Mask* gate) const {
    if (cotangent.height() != out_h_ || cotangent.width() != out_w_ || cotangent.channels() != channels)
        throw InvalidArgument("sampler cotangent shape mismatch");
    Raster out(src_h_, src_w_, channels);
    auto o = out.data();
    auto g = cotangent.data();
    for (std::size_t i = 0; i < taps_.size(); ++i) {
        for (const Tap& t : taps_[i]) {
            if (t.weight == 0.0) continue;
            if (gate && gate->data()[t.src] == 0) continue;
            for (int c = 0; c < channels; ++c)
                o[static_cast<std::size_t>(t.src) * channels + c] += t.weight * g[i * channels + c];
        }
    }
    return out;
}

Raster resize_bilinear(const Raster& src, int out_height, int out_width) {
    LinearSampler s(src.height(), src.width(), Box{0, 0, src.width(), src.height()}, out_height, out_width);
    return s.apply(src);
}

Image resize_bilinear(const Image& src, int out_height, int out_width) {
    return Image::clamped(resize_bilinear(static_cast<const Raster&>(src), out_height, out_width));
}

Raster crop(const Raster& src, const Box& box) {
    if (box.empty() || box.x < 0 || box.y < 0 || box.x + box.width > src.width() || box.y + box.height > src.height())
        throw InvalidArgument("crop box outside raster");
    Raster out(box.height, box.width, src.channels());
    for (int y = 0; y < box.height; ++y)
        for (int x = 0; x < box.width; ++x)
            for (int c = 0; c < src.channels(); ++c) out.at(y, x, c) = src.at(box.y + y, box.x + x, c);
    return out;
}

}  // namespace diffbody
