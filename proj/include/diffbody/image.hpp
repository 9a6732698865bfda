#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace diffbody {

// Row-major raster with top-left origin and interleaved channels. No range
// constraint: used for gradients and intermediate fields.
class Raster {
public:
    Raster() = default;
    Raster(int height, int width, int channels, double fill = 0.0);

    int height() const { return height_; }
    int width() const { return width_; }
    int channels() const { return channels_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& at(int y, int x, int c = 0) { return data_[index(y, x, c)]; }
    double at(int y, int x, int c = 0) const { return data_[index(y, x, c)]; }
    std::size_t index(int y, int x, int c = 0) const {
        return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
    }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }

    bool same_shape(const Raster& o) const {
        return height_ == o.height_ && width_ == o.width_ && channels_ == o.channels_;
    }
    bool operator==(const Raster& o) const = default;

protected:
    int height_ = 0;
    int width_ = 0;
    int channels_ = 0;
    std::vector<double> data_;
};

// Pixel intensities in [0,1], 1 or 3 channels.
class Image : public Raster {
public:
    Image() = default;
    Image(int height, int width, int channels, double fill = 0.0);

    // Throws InvalidArgument unless every value is finite and in [0,1].
    static Image from_raster(const Raster& r);
    // Clamps into [0,1]; non-finite values become 0.
    static Image clamped(const Raster& r);

    bool valid() const;
    bool operator==(const Image& o) const = default;
};

class Mask {
public:
    Mask() = default;
    Mask(int height, int width, std::uint8_t fill = 0);

    int height() const { return height_; }
    int width() const { return width_; }
    std::uint8_t& at(int y, int x) { return data_[static_cast<std::size_t>(y) * width_ + x]; }
    std::uint8_t at(int y, int x) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }
    std::span<std::uint8_t> data() { return data_; }
    std::span<const std::uint8_t> data() const { return data_; }

    std::size_t count() const;
    bool any() const { return count() > 0; }
    bool operator==(const Mask& o) const = default;

private:
    int height_ = 0;
    int width_ = 0;
    std::vector<std::uint8_t> data_;
};

// Every value is exactly 0 or 1.
bool is_binary(const Mask& m);

// Per-pixel body-part ids; kBackgroundLabel marks uncovered pixels.
inline constexpr int kBackgroundLabel = 0;

class LabelMap {
public:
    LabelMap() = default;
    LabelMap(int height, int width, int fill = kBackgroundLabel);

    int height() const { return height_; }
    int width() const { return width_; }
    int& at(int y, int x) { return data_[static_cast<std::size_t>(y) * width_ + x]; }
    int at(int y, int x) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }
    std::span<const int> data() const { return data_; }
    bool operator==(const LabelMap& o) const = default;

    bool contains(int label) const;
    Mask select(int label) const;
    // Everything that is not background.
    Mask foreground() const;

private:
    int height_ = 0;
    int width_ = 0;
    std::vector<int> data_;
};

// Joint likelihood fields, one 128x128 plane per joint, values in [0,1].
class Heatmap {
public:
    static constexpr int kResolution = 128;

    Heatmap() = default;
    explicit Heatmap(int joints, double fill = 0.0);

    int joints() const { return joints_; }
    int resolution() const { return kResolution; }
    double& at(int j, int y, int x) { return data_[index(j, y, x)]; }
    double at(int j, int y, int x) const { return data_[index(j, y, x)]; }
    std::size_t index(int j, int y, int x) const {
        return (static_cast<std::size_t>(j) * kResolution + y) * kResolution + x;
    }
    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    bool operator==(const Heatmap& o) const = default;

private:
    int joints_ = 0;
    std::vector<double> data_;
};

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
    bool operator==(const Vec2&) const = default;
};

// A point with confidence <= 0 is treated as missing.
struct Keypoint {
    Vec2 position;
    double confidence = 1.0;

    bool present() const { return confidence > 0.0; }
    bool operator==(const Keypoint&) const = default;
};

using Keypoints = std::vector<Keypoint>;

// Marks points outside [0,w)x[0,h) as missing.
Keypoints flag_out_of_bounds(Keypoints pts, int height, int width);

// Rec.601 luma, used wherever a colour image needs a grayscale view.
double luminance(const Image& img, int y, int x);

}  // namespace diffbody
