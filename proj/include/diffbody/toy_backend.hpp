#pragma once

#include <array>
#include <functional>
#include <span>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "diffbody/diffusion.hpp"

namespace diffbody::diffusion {

// Space-to-depth codec: each factor x factor x 3 pixel block becomes one
// latent cell with 3 * factor^2 channels. Encode is a permutation, so a
// decode(encode(x)) round trip is exact; decode clamps to [0, 1].
class ToyCodec final : public LatentCodec {
public:
    static constexpr int kFactor = 4;

    int factor() const override { return kFactor; }
    int channels() const override { return 3 * kFactor * kFactor; }
    LatentMap encode(const Image& image) const override;
    Image decode(const LatentMap& latent) const override;
    std::optional<LatentMap> decode_vjp(const LatentMap& latent, const Raster& image_cotangent) const override;

    // Pixel (y, x, colour) addressed by latent element (cy, cx, k).
    static void pixel_of(int cy, int cx, int k, int& y, int& x, int& colour);
};

struct ToyBackendOptions {
    std::uint64_t seed = 7;
    std::size_t embedding_dim = 32;
    double detail_std = 0.025;   // per-pixel spread around a part's colour
    double offset_std = 0.1;     // spread of a part's colour around the target
    double embedding_gain = 0.2; // scale of the embedding -> colour-shift map
    double background = 0.5;
};

struct ToyReferenceStats {
    std::vector<std::array<double, 3>> part_mean;  // indexed by label
    std::vector<bool> part_present;
    Image face;
    std::string token;
    // Embeddings with zero colour shift per stage (empty: the origin).
    std::vector<double> anchor_body;
    std::vector<double> anchor_face;
};

// Self-contained backend: a closed-form Gaussian-prior denoiser whose target
// colours are shifted linearly by the text embedding, plus deterministic
// perception stand-ins. Everything is analytic, so embedding gradients are exact.
class ToyBackend final : public Backend {
public:
    explicit ToyBackend(ToyBackendOptions options = {});

    std::string id() const override { return "toy"; }
    const NoiseSchedule& schedule() const override { return schedule_; }
    const LatentCodec& codec() const override { return codec_; }
    const Denoiser& denoiser() const override { return *denoiser_; }
    const TextEncoder& text_encoder() const override { return *text_; }
    const PoseEstimator& pose_estimator() const override { return *pose_; }
    const Embedder& part_embedder() const override { return *part_; }
    const Embedder& identity_embedder() const override { return *identity_; }
    const FaceLandmarker& face_landmarker() const override { return *landmarks_; }
    const FaceOrientationDetector& orientation_detector() const override { return *orientation_; }

    std::shared_ptr<const Backend> personalize(const Personalization& ref) const override;
    std::optional<TextEmbedding> embedding_vjp(const RefineTrace& trace,
                                               const LatentMap& latent_cotangent) const override;
    bool concurrent_inference() const override { return true; }

    const ToyBackendOptions& options() const { return options_; }
    const std::shared_ptr<const ToyReferenceStats>& reference() const { return stats_; }

    // Target colour before the embedding shift, image resolution.
    Raster base_target(const Conditioning& cond, int height, int width) const;
    // Colour shift of (label, colour) for embedding e, A (e - anchor).
    double shift(int label, int colour, std::span<const double> e, Stage stage = Stage::Body) const;

private:
    ToyBackendOptions options_;
    NoiseSchedule schedule_;
    ToyCodec codec_;
    std::vector<double> shift_matrix_;  // [label][colour][dim]
    std::shared_ptr<const ToyReferenceStats> stats_;
    std::unique_ptr<Denoiser> denoiser_;
    std::unique_ptr<TextEncoder> text_;
    std::unique_ptr<PoseEstimator> pose_;
    std::unique_ptr<Embedder> part_;
    std::unique_ptr<Embedder> identity_;
    std::unique_ptr<FaceLandmarker> landmarks_;
    std::unique_ptr<FaceOrientationDetector> orientation_;

    void build_components();
};

// Flattened normalized thumbnail; optionally grayscale and mean-centred.
class ThumbnailEmbedder final : public Embedder {
public:
    ThumbnailEmbedder(int size, bool grayscale, bool centred) : size_(size), grayscale_(grayscale), centred_(centred) {}
    std::vector<double> embed(const Image& image) const override;
    std::optional<Raster> vjp(const Image& image, std::span<const double> cotangent) const override;

private:
    int size_;
    bool grayscale_;
    bool centred_;
    std::vector<double> features(const Image& image) const;
};

// Darkness-weighted centroids in five fixed face subregions.
class CentroidLandmarker final : public FaceLandmarker {
public:
    static constexpr int kLandmarks = 5;
    Keypoints detect(const Image& face) const override;
    std::optional<Raster> vjp(const Image& face, std::span<const Vec2> cotangent) const override;
};

// One Gaussian bump per joint on the 128 x 128 grid, centred on the hint
// position (or a canonical standing layout), scaled by how far the local
// patch colour is from the background.
class BumpPoseEstimator final : public PoseEstimator {
public:
    explicit BumpPoseEstimator(double background) : background_(background) {}
    int joints() const override;
    Heatmap estimate(const Image& image, const Keypoints* hint) const override;
    std::optional<Raster> vjp(const Image& image, const Keypoints* hint, const Heatmap& cotangent) const override;

    static constexpr double kSigma = 2.0;
    static constexpr double kContrast = 0.1;
    static constexpr int kPatch = 5;
    static Keypoints canonical_layout(int height, int width);

private:
    double background_;
};

using BackendFactory = std::function<std::shared_ptr<const Backend>(const std::map<std::string, double>& options)>;

void register_backend(const std::string& id, BackendFactory factory);
std::vector<std::string> registered_backends();
// Throws ConfigError listing the registered ids when `id` is unknown.
std::shared_ptr<const Backend> create_backend(const std::string& id, const std::map<std::string, double>& options = {});

}  // namespace diffbody::diffusion
