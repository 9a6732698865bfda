#include "diffbody/compositor.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "diffbody/error.hpp"

namespace diffbody::compositor {

namespace {

constexpr int kDx[4] = {1, -1, 0, 0};
constexpr int kDy[4] = {0, 0, 1, -1};

struct System {
    std::vector<int> index;  // pixel -> unknown, -1 outside
    std::vector<std::pair<int, int>> pixels;
};

System build_system(const Mask& region) {
    const int h = region.height(), w = region.width();
    System s;
    s.index.assign(static_cast<std::size_t>(h) * w, -1);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!region.at(y, x)) continue;
            if (x == 0 || y == 0 || x == w - 1 || y == h - 1)
                throw GeometryError("blend region touches the image border");
            s.index[static_cast<std::size_t>(y) * w + x] = static_cast<int>(s.pixels.size());
            s.pixels.emplace_back(y, x);
        }
    return s;
}

// y = A x for A = 4 I - (interior adjacency).
void apply_laplacian(const System& s, int w, const std::vector<double>& x, std::vector<double>& y) {
    for (std::size_t i = 0; i < s.pixels.size(); ++i) {
        const auto [py, px] = s.pixels[i];
        double v = 4.0 * x[i];
        for (int k = 0; k < 4; ++k) {
            const int j = s.index[static_cast<std::size_t>(py + kDy[k]) * w + px + kDx[k]];
            if (j >= 0) v -= x[j];
        }
        y[i] = v;
    }
}

void solve_dense(const System& s, int w, const std::vector<double>& b, std::vector<double>& x) {
    const std::size_t n = b.size();
    std::vector<double> L(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const auto [py, px] = s.pixels[i];
        L[i * n + i] = 4.0;
        for (int k = 0; k < 4; ++k) {
            const int j = s.index[static_cast<std::size_t>(py + kDy[k]) * w + px + kDx[k]];
            if (j >= 0) L[i * n + j] = -1.0;
        }
    }
    // In-place Cholesky, lower triangle.
    for (std::size_t j = 0; j < n; ++j) {
        double d = L[j * n + j];
        for (std::size_t k = 0; k < j; ++k) d -= L[j * n + k] * L[j * n + k];
        L[j * n + j] = std::sqrt(d);
        for (std::size_t i = j + 1; i < n; ++i) {
            double v = L[i * n + j];
            for (std::size_t k = 0; k < j; ++k) v -= L[i * n + k] * L[j * n + k];
            L[i * n + j] = v / L[j * n + j];
        }
    }
    x = b;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < i; ++k) x[i] -= L[i * n + k] * x[k];
        x[i] /= L[i * n + i];
    }
    for (std::size_t i = n; i-- > 0;) {
        for (std::size_t k = i + 1; k < n; ++k) x[i] -= L[k * n + i] * x[k];
        x[i] /= L[i * n + i];
    }
}

int solve_cg(const System& s, int w, const std::vector<double>& b, std::vector<double>& x) {
    const std::size_t n = b.size();
    std::vector<double> r(n), p(n), ap(n);
    apply_laplacian(s, w, x, ap);
    double bnorm = 0.0, rr = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        r[i] = b[i] - ap[i];
        p[i] = r[i];
        rr += r[i] * r[i];
        bnorm += b[i] * b[i];
    }
    const double tol2 = 1e-16 * std::max(bnorm, 1.0);
    const int max_iter = static_cast<int>(10 * n);
    int it = 0;
    while (rr > tol2 && it < max_iter) {
        apply_laplacian(s, w, p, ap);
        double pap = 0.0;
        for (std::size_t i = 0; i < n; ++i) pap += p[i] * ap[i];
        const double alpha = rr / pap;
        double rr_new = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
            rr_new += r[i] * r[i];
        }
        const double beta = rr_new / rr;
        for (std::size_t i = 0; i < n; ++i) p[i] = r[i] + beta * p[i];
        rr = rr_new;
        ++it;
    }
    return it;
}

}  // namespace

Raster poisson_solve(const BlendProblem& p, SolverStats* stats) {
    const Image& src = p.source;
    const Image& dst = p.destination;
    if (!src.same_shape(dst)) throw InvalidArgument("blend source and destination shapes differ");
    if (p.region.height() != dst.height() || p.region.width() != dst.width())
        throw InvalidArgument("blend region shape differs from destination");
    Raster out = dst;
    const System s = build_system(p.region);
    const std::size_t n = s.pixels.size();
    if (stats) *stats = SolverStats{n, 0, n <= kDenseLimit};
    if (n == 0) return out;
    const int w = dst.width();
    for (int c = 0; c < dst.channels(); ++c) {
        std::vector<double> b(n), x(n);
        for (std::size_t i = 0; i < n; ++i) {
            const auto [py, px] = s.pixels[i];
            double v = 0.0;
            for (int k = 0; k < 4; ++k) {
                const int qy = py + kDy[k], qx = px + kDx[k];
                v += src.at(py, px, c) - src.at(qy, qx, c);
                if (s.index[static_cast<std::size_t>(qy) * w + qx] < 0) v += dst.at(qy, qx, c);
            }
            b[i] = v;
            x[i] = dst.at(py, px, c);
        }
        if (n <= kDenseLimit) {
            solve_dense(s, w, b, x);
        } else {
            const int it = solve_cg(s, w, b, x);
            if (stats) stats->iterations = std::max(stats->iterations, it);
        }
        for (std::size_t i = 0; i < n; ++i) out.at(s.pixels[i].first, s.pixels[i].second, c) = x[i];
    }
    return out;
}

Image poisson_blend(const BlendProblem& p, SolverStats* stats) {
    const Raster solved = poisson_solve(p, stats);
    Image out = p.destination;
    auto o = out.data();
    auto v = solved.data();
    const int ch = out.channels();
    for (int y = 0; y < out.height(); ++y)
        for (int x = 0; x < out.width(); ++x) {
            if (!p.region.at(y, x)) continue;
            for (int c = 0; c < ch; ++c) {
                const std::size_t i = out.index(y, x, c);
                o[i] = std::clamp(v[i], 0.0, 1.0);
            }
        }
    return out;
}

Image paste_face(const Image& body, const Image& face, const geometry::Placement& pl, const Mask& interior) {
    const Box& b = pl.box;
    if (pl.source_height != body.height() || pl.source_width != body.width())
        throw GeometryError("face placement was recorded for a different image size");
    if (b.empty() || b.x < 0 || b.y < 0 || b.x + b.width > body.width() || b.y + b.height > body.height())
        throw GeometryError("face placement lies outside the body image");
    if (face.height() != pl.out_height || face.width() != pl.out_width)
        throw GeometryError("face crop size does not match its placement");
    if (interior.height() != face.height() || interior.width() != face.width())
        throw GeometryError("face interior mask does not match the face crop");
    if (face.channels() != body.channels()) throw InvalidArgument("face and body channel counts differ");

    const Image placed = geometry::uncrop(face, pl);
    const Mask placed_mask = geometry::uncrop_mask(interior, pl);
    BlendProblem p{body, body, Mask(body.height(), body.width())};
    for (int y = 0; y < b.height; ++y)
        for (int x = 0; x < b.width; ++x) {
            for (int c = 0; c < body.channels(); ++c) p.source.at(b.y + y, b.x + x, c) = placed.at(y, x, c);
            const int gy = b.y + y, gx = b.x + x;
            const bool edge = gx == 0 || gy == 0 || gx == body.width() - 1 || gy == body.height() - 1;
            p.region.at(gy, gx) = (placed_mask.at(y, x) && !edge) ? 1 : 0;
        }
    return poisson_blend(p);
}

}  // namespace diffbody::compositor
