#include "diffbody/diffusion.hpp"

#include <cmath>
#include <string>

#include "diffbody/body_model.hpp"
#include "diffbody/error.hpp"

namespace diffbody::diffusion {

NoiseSchedule NoiseSchedule::linear(int steps, double beta_start, double beta_end) {
    if (steps < 1) throw InvalidArgument("noise schedule needs at least one step");
    if (!(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end))
        throw InvalidArgument("noise schedule betas must satisfy 0 < start <= end < 1");
    NoiseSchedule s;
    s.betas_.resize(steps);
    s.alpha_bars_.resize(steps + 1);
    s.alpha_bars_[0] = 1.0;
    for (int i = 0; i < steps; ++i) {
        const double f = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
        s.betas_[i] = beta_start + (beta_end - beta_start) * f;
        s.alpha_bars_[i + 1] = s.alpha_bars_[i] * (1.0 - s.betas_[i]);
    }
    return s;
}

double NoiseSchedule::posterior_variance(int t) const {
    return (1.0 - alpha_bar(t - 1)) / (1.0 - alpha_bar(t)) * beta(t);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
    auto mix = [](std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    };
    return mix(mix(mix(base) ^ a) ^ b);
}

int start_step(const NoiseSchedule& schedule, double strength) {
    if (!(strength > 0.0 && strength <= 1.0))
        throw InvalidArgument("noise strength must be in (0, 1], got " + std::to_string(strength));
    return static_cast<int>(std::lround(strength * schedule.steps()));
}

NoiseTrajectory::NoiseTrajectory(const NoiseSchedule& schedule, LatentMap x0, int t_start, std::uint64_t seed)
    : schedule_(&schedule), x0_(std::move(x0)), t_start_(t_start), seed_(seed) {
    if (t_start < 0 || t_start > schedule.steps()) throw InvalidArgument("trajectory start step out of range");
}

LatentMap NoiseTrajectory::at(int t) const {
    if (t < 0 || t > t_start_) throw InvalidArgument("trajectory entry out of range: " + std::to_string(t));
    LatentMap x = x0_;
    if (t == 0) return x;
    Mask none(x.height(), x.width(), 0);
    restore(t, x, none);
    return x;
}

void NoiseTrajectory::restore(int t, LatentMap& x, const Mask& latent_mask) const {
    if (t < 0 || t > t_start_) throw InvalidArgument("trajectory entry out of range: " + std::to_string(t));
    if (!x.same_shape(x0_) || latent_mask.height() != x.height() || latent_mask.width() != x.width())
        throw InvalidArgument("trajectory restore shape mismatch");
    const int ch = x.channels();
    auto xs = x.data();
    auto zs = x0_.data();
    auto ms = latent_mask.data();
    if (t == 0) {
        for (std::size_t cell = 0; cell < ms.size(); ++cell)
            if (!ms[cell])
                for (int k = 0; k < ch; ++k) xs[cell * ch + k] = zs[cell * ch + k];
        return;
    }
    const double a = std::sqrt(schedule_->alpha_bar(t));
    const double b = std::sqrt(1.0 - schedule_->alpha_bar(t));
    SeededNoise eps(derive_seed(seed_, static_cast<std::uint64_t>(t)));
    for (std::size_t cell = 0; cell < ms.size(); ++cell)
        for (int k = 0; k < ch; ++k) {
            const double e = eps.normal();  // drawn for every element so streams stay aligned
            if (!ms[cell]) xs[cell * ch + k] = a * zs[cell * ch + k] + b * e;
        }
}

NoiseTrajectory q_sample_trajectory(const NoiseSchedule& schedule, const LatentMap& x0, double strength,
                                    std::uint64_t seed) {
    return NoiseTrajectory(schedule, x0, start_step(schedule, strength), seed);
}

bool TextEmbedding::finite() const {
    for (double v : values)
        if (!std::isfinite(v)) return false;
    return true;
}

Image rasterize_skeleton(const Keypoints& keypoints, int height, int width) {
    Image out(height, width, 3, 0.0);
    auto plot = [&](int x, int y) {
        if (x < 0 || y < 0 || x >= width || y >= height) return;
        for (int c = 0; c < 3; ++c) out.at(y, x, c) = 1.0;
    };
    for (const auto& [a, b] : geometry::skeleton_bones()) {
        if (a >= static_cast<int>(keypoints.size()) || b >= static_cast<int>(keypoints.size())) continue;
        const auto& p = keypoints[a];
        const auto& q = keypoints[b];
        if (!p.present() || !q.present()) continue;
        const double dx = q.position.x - p.position.x;
        const double dy = q.position.y - p.position.y;
        const int n = std::max(1, static_cast<int>(std::ceil(std::max(std::abs(dx), std::abs(dy)))));
        for (int i = 0; i <= n; ++i) {
            const double s = static_cast<double>(i) / n;
            plot(static_cast<int>(std::floor(p.position.x + s * dx)), static_cast<int>(std::floor(p.position.y + s * dy)));
        }
    }
    return out;
}

LatentMap denoise_step(const NoiseSchedule& schedule, const Denoiser& denoiser, const LatentMap& x_t, int t,
                       const Conditioning& cond, NoiseSource& noise) {
    if (t < 1 || t > schedule.steps()) throw InvalidArgument("denoise step out of range: " + std::to_string(t));
    const LatentMap eps = denoiser.predict_noise(x_t, t, cond);
    if (!eps.same_shape(x_t)) throw BackendError("noise prediction has the wrong shape at step " + std::to_string(t));
    for (double v : eps.data())
        if (!std::isfinite(v)) throw BackendError("non-finite noise prediction at step " + std::to_string(t));
    const double coef = schedule.beta(t) / std::sqrt(1.0 - schedule.alpha_bar(t));
    const double inv_sqrt_alpha = 1.0 / std::sqrt(schedule.alpha(t));
    const double sigma = t > 1 ? std::sqrt(schedule.posterior_variance(t)) : 0.0;
    LatentMap out = x_t;
    auto o = out.data();
    auto e = eps.data();
    for (std::size_t i = 0; i < o.size(); ++i) {
        o[i] = (o[i] - coef * e[i]) * inv_sqrt_alpha;
        if (sigma > 0.0) o[i] += sigma * noise.normal();
    }
    return out;
}

}  // namespace diffbody::diffusion
