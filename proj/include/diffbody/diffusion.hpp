#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "diffbody/image.hpp"

namespace diffbody::diffusion {

// Codec-space feature grid: height/width are image size / codec factor.
class LatentMap : public Raster {
public:
    using Raster::Raster;
    LatentMap() = default;
    bool operator==(const LatentMap&) const = default;
};

// Variance schedule with steps t = 1..T; alpha_bar(0) == 1.
class NoiseSchedule {
public:
    static NoiseSchedule linear(int steps = 1000, double beta_start = 1e-4, double beta_end = 2e-2);

    int steps() const { return static_cast<int>(betas_.size()); }
    double beta(int t) const { return betas_.at(t - 1); }
    double alpha(int t) const { return 1.0 - beta(t); }
    double alpha_bar(int t) const { return alpha_bars_.at(t); }
    // Variance of q(x_{t-1} | x_t, x_0).
    double posterior_variance(int t) const;

private:
    std::vector<double> betas_;
    std::vector<double> alpha_bars_;  // index 0..T
};

// Single seeded source for every stochastic draw in a run.
class NoiseSource {
public:
    virtual ~NoiseSource() = default;
    virtual double normal() = 0;
};

class SeededNoise final : public NoiseSource {
public:
    explicit SeededNoise(std::uint64_t seed) : engine_(seed) {}
    double normal() override { return dist_(engine_); }
    std::uint64_t next_u64() { return engine_(); }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> dist_{0.0, 1.0};
};

class ZeroNoise final : public NoiseSource {
public:
    double normal() override { return 0.0; }
};

// Mixes a base seed with stream identifiers (splitmix64).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);

// Forward-noised copies x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps_t for
// t = 0..t_start; entry 0 is x0 itself. Each eps_t is an independent draw
// from its own stream derived from the trajectory seed, so entries are
// regenerated on demand instead of stored, bit-identically on every call.
class NoiseTrajectory {
public:
    NoiseTrajectory(const NoiseSchedule& schedule, LatentMap x0, int t_start, std::uint64_t seed);

    int t_start() const { return t_start_; }
    std::size_t size() const { return static_cast<std::size_t>(t_start_) + 1; }
    const LatentMap& x0() const { return x0_; }
    LatentMap at(int t) const;
    // Overwrites every latent cell of `x` whose latent_mask entry is 0 with
    // entry t.
    void restore(int t, LatentMap& x, const Mask& latent_mask) const;

private:
    const NoiseSchedule* schedule_;
    LatentMap x0_;
    int t_start_;
    std::uint64_t seed_;
};

// round(strength * T). Throws InvalidArgument unless 0 < strength <= 1.
int start_step(const NoiseSchedule& schedule, double strength);

NoiseTrajectory q_sample_trajectory(const NoiseSchedule& schedule, const LatentMap& x0, double strength,
                                    std::uint64_t seed);

struct TextEmbedding {
    std::vector<double> values;

    std::size_t dim() const { return values.size(); }
    bool finite() const;
    bool operator==(const TextEmbedding&) const = default;
};

enum class Stage { Body, Face };

// Everything the denoiser is conditioned on. `skeleton` is the rasterized
// keypoint condition at image resolution. `part_layout` (image resolution)
// is optional side information; adapters may ignore both.
struct Conditioning {
    TextEmbedding embedding;
    Keypoints keypoints;
    Image skeleton;
    std::optional<LabelMap> part_layout;
    Stage stage = Stage::Body;
    double guidance_scale = 1.0;
};

// Draws keypoint bones as 1-px white lines on black.
Image rasterize_skeleton(const Keypoints& keypoints, int height, int width);

class LatentCodec {
public:
    virtual ~LatentCodec() = default;
    virtual int factor() const = 0;
    virtual int channels() const = 0;
    virtual LatentMap encode(const Image& image) const = 0;
    virtual Image decode(const LatentMap& latent) const = 0;
    // Cotangent of decode at `latent`; nullopt when not differentiable.
    virtual std::optional<LatentMap> decode_vjp(const LatentMap& latent, const Raster& image_cotangent) const {
        (void)latent;
        (void)image_cotangent;
        return std::nullopt;
    }
};

class Denoiser {
public:
    virtual ~Denoiser() = default;
    // Noise prediction eps_hat(x_t, t, cond).
    virtual LatentMap predict_noise(const LatentMap& x_t, int t, const Conditioning& cond) const = 0;
};

// Ancestral update x_{t-1} = (x_t - beta_t / sqrt(1 - ab_t) eps_hat) / sqrt(alpha_t)
// + sigma_t z, with sigma_t^2 the posterior variance and no noise at t = 1.
// Throws BackendError naming the step on a non-finite prediction.
LatentMap denoise_step(const NoiseSchedule& schedule, const Denoiser& denoiser, const LatentMap& x_t, int t,
                       const Conditioning& cond, NoiseSource& noise);

class TextEncoder {
public:
    virtual ~TextEncoder() = default;
    virtual TextEmbedding encode(const std::string& prompt) const = 0;
    virtual std::size_t dim() const = 0;
};

class PoseEstimator {
public:
    virtual ~PoseEstimator() = default;
    virtual int joints() const = 0;
    // `hint` carries known joint positions in pixels; estimators that detect
    // joints themselves ignore it.
    virtual Heatmap estimate(const Image& image, const Keypoints* hint) const = 0;
    virtual std::optional<Raster> vjp(const Image& image, const Keypoints* hint, const Heatmap& cotangent) const {
        (void)image, (void)hint, (void)cotangent;
        return std::nullopt;
    }
};

// Image -> unit vector (part appearance or face identity).
class Embedder {
public:
    virtual ~Embedder() = default;
    // Throws BackendError when no embedding can be formed.
    virtual std::vector<double> embed(const Image& image) const = 0;
    virtual std::optional<Raster> vjp(const Image& image, std::span<const double> cotangent) const {
        (void)image, (void)cotangent;
        return std::nullopt;
    }
};

class FaceLandmarker {
public:
    virtual ~FaceLandmarker() = default;
    virtual Keypoints detect(const Image& face) const = 0;
    // Cotangent is one (dx, dy) per landmark.
    virtual std::optional<Raster> vjp(const Image& face, std::span<const Vec2> cotangent) const {
        (void)face, (void)cotangent;
        return std::nullopt;
    }
};

// One of left, right, front, back, up, down; nullopt when undetermined.
class FaceOrientationDetector {
public:
    virtual ~FaceOrientationDetector() = default;
    virtual std::optional<std::string> orientation(const Image& face) const = 0;
};

// What a refinement pass leaves behind for an analytic embedding gradient.
struct RefineTrace {
    int t_start = 0;
    Mask latent_mask;  // latent-grid cells the reverse process may change
    Conditioning cond;
    int image_height = 0;
    int image_width = 0;
};

struct Personalization {
    Image reference;
    LabelMap reference_labels;
    Image face_crop;
    std::string token = "sks";
    // Prompts the tuned model is anchored on; may be empty.
    std::string body_prompt;
    std::string face_prompt;
};

class Backend {
public:
    virtual ~Backend() = default;

    virtual std::string id() const = 0;
    virtual const NoiseSchedule& schedule() const = 0;
    virtual const LatentCodec& codec() const = 0;
    virtual const Denoiser& denoiser() const = 0;
    virtual const TextEncoder& text_encoder() const = 0;
    virtual const PoseEstimator& pose_estimator() const = 0;
    virtual const Embedder& part_embedder() const = 0;
    virtual const Embedder& identity_embedder() const = 0;
    virtual const FaceLandmarker& face_landmarker() const = 0;
    virtual const FaceOrientationDetector& orientation_detector() const = 0;

    // Returns a backend bound to the reference person under `token`. Real
    // adapters fine-tune the denoiser (DreamBooth-style, lr 1e-6) on the
    // reference body and face images; the toy backend records reference
    // statistics. Throws InvalidArgument on an empty token.
    virtual std::shared_ptr<const Backend> personalize(const Personalization& ref) const = 0;

    // d(final latent . cotangent) / d(embedding) for the pass in `trace`, or
    // nullopt when the denoiser is not differentiable.
    virtual std::optional<TextEmbedding> embedding_vjp(const RefineTrace& trace,
                                                       const LatentMap& latent_cotangent) const {
        (void)trace, (void)latent_cotangent;
        return std::nullopt;
    }

    // Whether concurrent read-only inference is safe.
    virtual bool concurrent_inference() const { return false; }
};

}  // namespace diffbody::diffusion
