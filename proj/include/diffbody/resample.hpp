#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "diffbody/image.hpp"

namespace diffbody {

struct Box {
    int x = 0;
    int y = 0;
    int width = 0;
    int height = 0;

    bool empty() const { return width <= 0 || height <= 0; }
    bool operator==(const Box&) const = default;
};

// A fixed linear map from a source raster region to an out_h x out_w grid
// (bilinear, pixel-centre aligned, edge-clamped). Stored as sparse weights so
// the same map can be applied and transposed (for gradients).
class LinearSampler {
public:
    LinearSampler(int src_height, int src_width, const Box& region, int out_height, int out_width);

    int out_height() const { return out_h_; }
    int out_width() const { return out_w_; }

    // `gate`, when given, zeroes source pixels where gate == 0 before sampling.
    Raster apply(const Raster& src, const Mask* gate = nullptr) const;
    // Adjoint of apply: scatters an out-shaped cotangent back to source shape.
    Raster transpose(const Raster& cotangent, int channels, const Mask* gate = nullptr) const;

private:
    struct Tap {
        std::uint32_t src;  // y * src_w + x
        double weight;
    };
    int src_h_, src_w_, out_h_, out_w_;
    std::vector<std::array<Tap, 4>> taps_;
};

Raster resize_bilinear(const Raster& src, int out_height, int out_width);
Image resize_bilinear(const Image& src, int out_height, int out_width);
Raster crop(const Raster& src, const Box& box);

}  // namespace diffbody
