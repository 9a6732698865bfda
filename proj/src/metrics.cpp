#include "diffbody/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "diffbody/error.hpp"

namespace diffbody::metrics {

Psnr psnr(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw InvalidArgument("psnr: image shapes differ");
    if (a.empty()) throw InvalidArgument("psnr: empty images");
    auto x = a.data();
    auto y = b.data();
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
    const double mse = s / static_cast<double>(x.size());
    if (mse == 0.0) return {std::numeric_limits<double>::infinity(), true};
    return {10.0 * std::log10(1.0 / mse), false};
}

namespace {

std::vector<double> luma(const Image& im) {
    std::vector<double> out(static_cast<std::size_t>(im.height()) * im.width());
    for (int y = 0; y < im.height(); ++y)
        for (int x = 0; x < im.width(); ++x)
            out[static_cast<std::size_t>(y) * im.width() + x] = im.channels() == 3 ? luminance(im, y, x) : im.at(y, x, 0);
    return out;
}

}  // namespace

double ssim(const Image& a, const Image& b) {
    if (a.height() != b.height() || a.width() != b.width()) throw InvalidArgument("ssim: image sizes differ");
    const int K = kSsimWindow;
    if (a.height() < K || a.width() < K) throw InvalidArgument("ssim: image smaller than the 11x11 window");
    const auto la = luma(a), lb = luma(b);
    std::vector<double> g(K * K);
    double gs = 0.0;
    for (int y = 0; y < K; ++y)
        for (int x = 0; x < K; ++x) {
            const double dy = y - K / 2, dx = x - K / 2;
            g[y * K + x] = std::exp(-(dx * dx + dy * dy) / (2.0 * kSsimSigma * kSsimSigma));
            gs += g[y * K + x];
        }
    for (double& v : g) v /= gs;
    const double c1 = (0.01 * 1.0) * (0.01 * 1.0), c2 = (0.03 * 1.0) * (0.03 * 1.0);
    const int W = a.width();
    double total = 0.0;
    int windows = 0;
    for (int oy = 0; oy + K <= a.height(); ++oy)
        for (int ox = 0; ox + K <= W; ++ox) {
            double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
            for (int y = 0; y < K; ++y)
                for (int x = 0; x < K; ++x) {
                    const double w = g[y * K + x];
                    const std::size_t i = static_cast<std::size_t>(oy + y) * W + ox + x;
                    mx += w * la[i];
                    my += w * lb[i];
                    sxx += w * la[i] * la[i];
                    syy += w * lb[i] * lb[i];
                    sxy += w * la[i] * lb[i];
                }
            const double vx = sxx - mx * mx, vy = syy - my * my, cxy = sxy - mx * my;
            total += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            ++windows;
        }
    return total / windows;
}

double heatmap_l2(const Heatmap& a, const Heatmap& b) {
    if (a.joints() != b.joints()) throw InvalidArgument("heatmap_l2: joint counts differ");
    if (a.joints() == 0) throw InvalidArgument("heatmap_l2: empty heatmaps");
    auto x = a.data();
    auto y = b.data();
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
    return s / static_cast<double>(x.size());
}

double id_metric(const Image& a, const Image& b, const diffusion::Embedder& identity) {
    const auto ea = identity.embed(a);
    const auto eb = identity.embed(b);
    if (ea.size() != eb.size()) throw BackendError("identity embeddings differ in size");
    double d = 0.0;
    for (std::size_t i = 0; i < ea.size(); ++i) d += ea[i] * eb[i];
    return 1.0 - d;
}

MetricReport mean_report(const std::vector<MetricReport>& rows, const std::string& label) {
    MetricReport m;
    m.label = label;
    auto avg = [&](auto get) -> std::optional<double> {
        double s = 0.0;
        int n = 0;
        for (const auto& r : rows) {
            if (!r.error.empty()) continue;
            const std::optional<double> v = get(r);
            if (!v) return std::nullopt;
            s += *v;
            ++n;
        }
        if (n == 0) return std::nullopt;
        return s / n;
    };
    const auto p = avg([](const MetricReport& r) -> std::optional<double> {
        if (!r.psnr) return std::nullopt;
        return r.psnr->db;
    });
    if (p) m.psnr = Psnr{*p, std::isinf(*p)};
    m.ssim = avg([](const MetricReport& r) { return r.ssim; });
    m.lpips = avg([](const MetricReport& r) { return r.lpips; });
    m.fid = avg([](const MetricReport& r) { return r.fid; });
    m.id = avg([](const MetricReport& r) { return r.id; });
    m.heatmap_l2 = avg([](const MetricReport& r) { return r.heatmap_l2; });
    return m;
}

std::string format_table(const std::vector<MetricReport>& rows, const std::string& label_header) {
    std::size_t lw = label_header.size();
    for (const auto& r : rows) lw = std::max(lw, r.label.size());
    auto cell = [](const std::optional<double>& v, int precision) {
        if (!v) return std::string("n/a");
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.*f", precision, *v);
        return std::string(buf);
    };
    std::ostringstream os;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-*s %10s %10s %10s %10s %10s %12s\n", static_cast<int>(lw), label_header.c_str(),
                  "PSNR", "SSIM", "LPIPS", "FID", "ID", "AW");
    os << buf;
    for (const auto& r : rows) {
        if (!r.error.empty()) {
            std::snprintf(buf, sizeof buf, "%-*s error: %s\n", static_cast<int>(lw), r.label.c_str(), r.error.c_str());
            os << buf;
            continue;
        }
        std::string ps = "n/a";
        if (r.psnr) ps = r.psnr->infinite ? "inf" : cell(r.psnr->db, 3);
        std::snprintf(buf, sizeof buf, "%-*s %10s %10s %10s %10s %10s %12s\n", static_cast<int>(lw), r.label.c_str(),
                      ps.c_str(), cell(r.ssim, 4).c_str(), cell(r.lpips, 4).c_str(), cell(r.fid, 3).c_str(),
                      cell(r.id, 4).c_str(), cell(r.heatmap_l2, 8).c_str());
        os << buf;
    }
    return os.str();
}

}  // namespace diffbody::metrics
