#pragma once

#include <optional>
#include <string>
#include <vector>

#include "diffbody/diffusion.hpp"
#include "diffbody/image.hpp"

namespace diffbody::metrics {

struct Psnr {
    double db = 0.0;
    bool infinite = false;
};

// 10 log10(1 / MSE) over every channel value; flagged infinite when equal.
Psnr psnr(const Image& a, const Image& b);

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;

// Mean SSIM over all fully contained 11x11 Gaussian windows of the luma
// images (colour inputs are converted with Rec.601 weights).
// Throws InvalidArgument if either side is smaller than the window.
double ssim(const Image& a, const Image& b);

// Mean squared difference over all joints and cells.
double heatmap_l2(const Heatmap& a, const Heatmap& b);

// 1 - cosine similarity of identity embeddings.
double id_metric(const Image& a, const Image& b, const diffusion::Embedder& identity);

// Optional slot for learned perceptual metrics.
class PerceptualMetric {
public:
    virtual ~PerceptualMetric() = default;
    virtual double distance(const Image& a, const Image& b) const = 0;
};

struct MetricReport {
    std::string label;
    std::optional<Psnr> psnr;
    std::optional<double> ssim;
    std::optional<double> lpips;
    std::optional<double> fid;
    std::optional<double> id;
    std::optional<double> heatmap_l2;
    std::string error;  // non-empty when the row could not be computed
};

// Column-wise mean over rows without errors; infinite PSNR rows make the mean
// infinite.
MetricReport mean_report(const std::vector<MetricReport>& rows, const std::string& label = "mean");

// Fixed-width text table with columns PSNR, SSIM, LPIPS, FID, ID, AW;
// unavailable cells read "n/a" and infinite PSNR reads "inf".
std::string format_table(const std::vector<MetricReport>& rows, const std::string& label_header = "name");

}  // namespace diffbody::metrics
