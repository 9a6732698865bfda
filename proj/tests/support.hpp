#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "diffbody/image.hpp"

namespace testing_support {

inline diffbody::Image random_image(int h, int w, int c, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    diffbody::Image im(h, w, c);
    for (double& v : im.data()) v = u(rng);
    return im;
}

inline diffbody::Mask random_mask(int h, int w, double p, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution b(p);
    diffbody::Mask m(h, w);
    for (auto& v : m.data()) v = b(rng) ? 1 : 0;
    return m;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / ("diffbody_" + tag + "_" + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

}  // namespace testing_support
