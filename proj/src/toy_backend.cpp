#include "diffbody/toy_backend.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <sstream>

#include "diffbody/body_model.hpp"
#include "diffbody/error.hpp"
#include "diffbody/mesh.hpp"
#include "diffbody/resample.hpp"

namespace diffbody::diffusion {

namespace {

constexpr int kColours = 3;
constexpr int kLabels = geometry::kPartLabelCount;

Image as_rgb(const Image& image) {
    if (image.channels() == 3) return image;
    Image out(image.height(), image.width(), 3);
    for (int y = 0; y < image.height(); ++y)
        for (int x = 0; x < image.width(); ++x)
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = image.at(y, x, 0);
    return out;
}

// Label per image pixel, background when no usable layout is supplied.
std::vector<int> pixel_labels(const Conditioning& cond, int height, int width) {
    std::vector<int> labels(static_cast<std::size_t>(height) * width, kBackgroundLabel);
    if (!cond.part_layout || cond.part_layout->height() != height || cond.part_layout->width() != width)
        return labels;
    auto src = cond.part_layout->data();
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = (src[i] >= 0 && src[i] < kLabels) ? src[i] : 0;
    return labels;
}

// Group id (label * 3 + colour) for every latent element in storage order.
std::vector<int> element_groups(const std::vector<int>& labels, int lh, int lw, int width) {
    const int f = ToyCodec::kFactor;
    const int ch = kColours * f * f;
    std::vector<int> groups(static_cast<std::size_t>(lh) * lw * ch);
    std::size_t i = 0;
    for (int cy = 0; cy < lh; ++cy)
        for (int cx = 0; cx < lw; ++cx)
            for (int k = 0; k < ch; ++k, ++i) {
                int y, x, c;
                ToyCodec::pixel_of(cy, cx, k, y, x, c);
                groups[i] = labels[static_cast<std::size_t>(y) * width + x] * kColours + c;
            }
    return groups;
}

class ToyDenoiser final : public Denoiser {
public:
    explicit ToyDenoiser(const ToyBackend& owner) : owner_(owner) {}

    LatentMap predict_noise(const LatentMap& x_t, int t, const Conditioning& cond) const override {
        const auto& opt = owner_.options();
        const int f = ToyCodec::kFactor;
        if (x_t.channels() != kColours * f * f) throw BackendError("toy denoiser: unexpected latent channel count");
        const int H = x_t.height() * f, W = x_t.width() * f;
        if (cond.embedding.dim() != opt.embedding_dim)
            throw BackendError("toy denoiser: embedding has dimension " + std::to_string(cond.embedding.dim()) +
                               ", expected " + std::to_string(opt.embedding_dim));

        const auto labels = pixel_labels(cond, H, W);
        const auto groups = element_groups(labels, x_t.height(), x_t.width(), W);
        const Raster base = owner_.base_target(cond, H, W);

        // Classifier-free guidance: the prediction is affine in the colour
        // shift, so eps_u + g (eps_c - eps_u) equals a shift scaled by g.
        std::vector<double> e(cond.embedding.values);
        for (double& v : e) v *= cond.guidance_scale;
        std::array<double, kLabels * kColours> shift{};
        for (int l = 0; l < kLabels; ++l)
            for (int c = 0; c < kColours; ++c) shift[l * kColours + c] = owner_.shift(l, c, e, cond.stage);

        const double ab = owner_.schedule().alpha_bar(t);
        const double a = std::sqrt(ab), b2 = 1.0 - ab, b = std::sqrt(b2);
        const double s2 = opt.detail_std * opt.detail_std;
        const double v = a * a * s2 + b2;

        auto xs = x_t.data();
        std::vector<double> tau(xs.size());
        std::array<double, kLabels * kColours> rsum{};
        std::array<double, kLabels * kColours> count{};
        std::size_t i = 0;
        for (int cy = 0; cy < x_t.height(); ++cy)
            for (int cx = 0; cx < x_t.width(); ++cx)
                for (int k = 0; k < x_t.channels(); ++k, ++i) {
                    int y, x, c;
                    ToyCodec::pixel_of(cy, cx, k, y, x, c);
                    tau[i] = base.at(y, x, c) + shift[groups[i]];
                    rsum[groups[i]] += xs[i] - a * tau[i];
                    count[groups[i]] += 1.0;
                }
        std::array<double, kLabels * kColours> delta{};
        for (int g = 0; g < kLabels * kColours; ++g) {
            const double P = 1.0 / (opt.offset_std * opt.offset_std) + count[g] * a * a / v;
            delta[g] = (a / v) * rsum[g] / P;
        }
        LatentMap eps(x_t.height(), x_t.width(), x_t.channels());
        auto es = eps.data();
        for (std::size_t j = 0; j < xs.size(); ++j) {
            const int g = groups[j];
            const double r = xs[j] - a * tau[j];
            const double x0 = tau[j] + delta[g] + (a * s2 / v) * (r - a * delta[g]);
            es[j] = (xs[j] - a * x0) / b;
        }
        return eps;
    }

private:
    const ToyBackend& owner_;
};

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    return h;
}

class HashTextEncoder final : public TextEncoder {
public:
    HashTextEncoder(std::uint64_t seed, std::size_t dim) : seed_(seed), dim_(dim) {}

    TextEmbedding encode(const std::string& prompt) const override {
        TextEmbedding e{std::vector<double>(dim_, 0.0)};
        std::istringstream in(prompt);
        std::string token;
        while (in >> token) {
            SeededNoise rng(derive_seed(seed_, fnv1a(token)));
            for (double& v : e.values) v += rng.normal();
        }
        double n = 0.0;
        for (double v : e.values) n += v * v;
        n = std::sqrt(n);
        if (n > 0.0)
            for (double& v : e.values) v /= n;
        return e;
    }
    std::size_t dim() const override { return dim_; }

private:
    std::uint64_t seed_;
    std::size_t dim_;
};

class NoOrientation final : public FaceOrientationDetector {
public:
    std::optional<std::string> orientation(const Image&) const override { return std::nullopt; }
};

}  // namespace

// ---- codec ---------------------------------------------------------------

void ToyCodec::pixel_of(int cy, int cx, int k, int& y, int& x, int& colour) {
    colour = k % kColours;
    const int off = k / kColours;
    y = cy * kFactor + off / kFactor;
    x = cx * kFactor + off % kFactor;
}

LatentMap ToyCodec::encode(const Image& image_in) const {
    if (image_in.height() % kFactor || image_in.width() % kFactor || image_in.empty())
        throw InvalidArgument("toy codec needs image sides divisible by " + std::to_string(kFactor));
    const Image image = as_rgb(image_in);
    LatentMap z(image.height() / kFactor, image.width() / kFactor, channels());
    for (int cy = 0; cy < z.height(); ++cy)
        for (int cx = 0; cx < z.width(); ++cx)
            for (int k = 0; k < z.channels(); ++k) {
                int y, x, c;
                pixel_of(cy, cx, k, y, x, c);
                z.at(cy, cx, k) = image.at(y, x, c);
            }
    return z;
}

Image ToyCodec::decode(const LatentMap& z) const {
    if (z.channels() != channels()) throw InvalidArgument("toy codec: latent has wrong channel count");
    Raster out(z.height() * kFactor, z.width() * kFactor, kColours);
    for (int cy = 0; cy < z.height(); ++cy)
        for (int cx = 0; cx < z.width(); ++cx)
            for (int k = 0; k < z.channels(); ++k) {
                int y, x, c;
                pixel_of(cy, cx, k, y, x, c);
                out.at(y, x, c) = z.at(cy, cx, k);
            }
    return Image::clamped(out);
}

std::optional<LatentMap> ToyCodec::decode_vjp(const LatentMap& z, const Raster& cot) const {
    if (cot.height() != z.height() * kFactor || cot.width() != z.width() * kFactor || cot.channels() != kColours)
        throw InvalidArgument("toy codec: cotangent shape mismatch");
    LatentMap g(z.height(), z.width(), z.channels());
    for (int cy = 0; cy < z.height(); ++cy)
        for (int cx = 0; cx < z.width(); ++cx)
            for (int k = 0; k < z.channels(); ++k) {
                int y, x, c;
                pixel_of(cy, cx, k, y, x, c);
                const double v = z.at(cy, cx, k);
                g.at(cy, cx, k) = (v >= 0.0 && v <= 1.0) ? cot.at(y, x, c) : 0.0;
            }
    return g;
}

// ---- backend -------------------------------------------------------------

ToyBackend::ToyBackend(ToyBackendOptions options)
    : options_(options), schedule_(NoiseSchedule::linear()) {
    if (options_.embedding_dim == 0) throw ConfigError("toy backend: embedding_dim must be positive");
    if (!(options_.detail_std > 0.0) || !(options_.offset_std > 0.0))
        throw ConfigError("toy backend: prior deviations must be positive");
    SeededNoise rng(derive_seed(options_.seed, 0xA11CEULL));
    shift_matrix_.resize(static_cast<std::size_t>(kLabels) * kColours * options_.embedding_dim);
    const double scale = options_.embedding_gain / std::sqrt(static_cast<double>(options_.embedding_dim));
    for (double& v : shift_matrix_) v = scale * rng.normal();
    build_components();
}

void ToyBackend::build_components() {
    denoiser_ = std::make_unique<ToyDenoiser>(*this);
    text_ = std::make_unique<HashTextEncoder>(options_.seed, options_.embedding_dim);
    pose_ = std::make_unique<BumpPoseEstimator>(options_.background);
    part_ = std::make_unique<ThumbnailEmbedder>(16, false, false);
    identity_ = std::make_unique<ThumbnailEmbedder>(16, true, true);
    landmarks_ = std::make_unique<CentroidLandmarker>();
    orientation_ = std::make_unique<NoOrientation>();
}

double ToyBackend::shift(int label, int colour, std::span<const double> e, Stage stage) const {
    const std::size_t D = options_.embedding_dim;
    const double* row = &shift_matrix_[(static_cast<std::size_t>(label) * kColours + colour) * D];
    const std::vector<double>* anchor = nullptr;
    if (stats_) anchor = stage == Stage::Face ? &stats_->anchor_face : &stats_->anchor_body;
    const bool anchored = anchor && anchor->size() == D;
    double s = 0.0;
    for (std::size_t k = 0; k < D; ++k) s += row[k] * (e[k] - (anchored ? (*anchor)[k] : 0.0));
    return s;
}

Raster ToyBackend::base_target(const Conditioning& cond, int height, int width) const {
    Raster out(height, width, kColours, options_.background);
    if (!stats_) return out;
    if (cond.stage == Stage::Face && !stats_->face.empty()) {
        const Image face = as_rgb(stats_->face);
        if (face.height() == height && face.width() == width) return face;
        return resize_bilinear(static_cast<const Raster&>(face), height, width);
    }
    if (cond.stage == Stage::Face) return out;
    const auto labels = pixel_labels(cond, height, width);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const int l = labels[static_cast<std::size_t>(y) * width + x];
            if (l == kBackgroundLabel || !stats_->part_present[l]) continue;
            for (int c = 0; c < kColours; ++c) out.at(y, x, c) = stats_->part_mean[l][c];
        }
    return out;
}

std::shared_ptr<const Backend> ToyBackend::personalize(const Personalization& ref) const {
    if (ref.token.empty()) throw InvalidArgument("personalization token must not be empty");
    if (ref.reference.empty()) throw InvalidArgument("personalization needs a reference image");
    if (ref.reference_labels.height() != ref.reference.height() || ref.reference_labels.width() != ref.reference.width())
        throw InvalidArgument("reference label map does not match the reference image");
    auto stats = std::make_shared<ToyReferenceStats>();
    stats->part_mean.assign(kLabels, {0.0, 0.0, 0.0});
    stats->part_present.assign(kLabels, false);
    std::vector<double> n(kLabels, 0.0);
    const Image rgb = as_rgb(ref.reference);
    for (int y = 0; y < rgb.height(); ++y)
        for (int x = 0; x < rgb.width(); ++x) {
            const int l = ref.reference_labels.at(y, x);
            if (l <= kBackgroundLabel || l >= kLabels) continue;
            n[l] += 1.0;
            for (int c = 0; c < kColours; ++c) stats->part_mean[l][c] += rgb.at(y, x, c);
        }
    for (int l = 0; l < kLabels; ++l) {
        if (n[l] == 0.0) continue;
        stats->part_present[l] = true;
        for (int c = 0; c < kColours; ++c) stats->part_mean[l][c] /= n[l];
    }
    stats->face = ref.face_crop;
    stats->token = ref.token;
    if (!ref.body_prompt.empty()) stats->anchor_body = text_->encode(ref.body_prompt).values;
    if (!ref.face_prompt.empty()) stats->anchor_face = text_->encode(ref.face_prompt).values;
    auto out = std::make_shared<ToyBackend>(options_);
    out->stats_ = std::move(stats);
    return out;
}

std::optional<TextEmbedding> ToyBackend::embedding_vjp(const RefineTrace& trace, const LatentMap& cot) const {
    const int f = ToyCodec::kFactor;
    const int H = trace.image_height, W = trace.image_width;
    if (cot.height() * f != H || cot.width() * f != W || cot.channels() != kColours * f * f)
        throw InvalidArgument("toy embedding_vjp: cotangent shape mismatch");
    if (trace.latent_mask.height() != cot.height() || trace.latent_mask.width() != cot.width())
        throw InvalidArgument("toy embedding_vjp: latent mask shape mismatch");

    const auto labels = pixel_labels(trace.cond, H, W);
    const auto groups = element_groups(labels, cot.height(), cot.width(), W);
    constexpr int G = kLabels * kColours;
    std::array<double, G> n{}, m{}, csum{};
    const int ch = cot.channels();
    auto cs = cot.data();
    for (std::size_t i = 0; i < groups.size(); ++i) {
        n[groups[i]] += 1.0;
        const std::size_t cell = i / ch;
        if (trace.latent_mask.data()[cell]) {
            m[groups[i]] += 1.0;
            csum[groups[i]] += cs[i];
        }
    }

    // Forward-mode sensitivity of a masked element to its group's shift; the
    // recursion is shared by every masked element of the group and does not
    // depend on the sampled values.
    const double s2 = options_.detail_std * options_.detail_std;
    const double S2 = options_.offset_std * options_.offset_std;
    std::array<double, G> D{};
    for (int t = trace.t_start; t >= 1; --t) {
        const double ab = schedule_.alpha_bar(t);
        const double a = std::sqrt(ab), b2 = 1.0 - ab;
        const double v = a * a * s2 + b2;
        const double beta = schedule_.beta(t);
        const double inv_sqrt_alpha = 1.0 / std::sqrt(schedule_.alpha(t));
        for (int g = 0; g < G; ++g) {
            if (m[g] == 0.0) continue;
            const double P = 1.0 / S2 + n[g] * a * a / v;
            const double d_delta = (a / v) * (m[g] * D[g] - n[g] * a) / P;
            const double d_x0 = 1.0 + d_delta + (a * s2 / v) * (D[g] - a - a * d_delta);
            D[g] = (D[g] * (1.0 - beta / b2) + (beta * a / b2) * d_x0) * inv_sqrt_alpha;
        }
    }

    const std::size_t dim = options_.embedding_dim;
    TextEmbedding grad{std::vector<double>(dim, 0.0)};
    for (int g = 0; g < G; ++g) {
        const double w = csum[g] * D[g] * trace.cond.guidance_scale;
        if (w == 0.0) continue;
        const double* row = &shift_matrix_[static_cast<std::size_t>(g) * dim];
        for (std::size_t k = 0; k < dim; ++k) grad.values[k] += w * row[k];
    }
    return grad;
}

// ---- perception stand-ins ------------------------------------------------

std::vector<double> ThumbnailEmbedder::features(const Image& image) const {
    if (image.empty()) throw BackendError("cannot embed an empty image");
    LinearSampler s(image.height(), image.width(), Box{0, 0, image.width(), image.height()}, size_, size_);
    const Raster r = s.apply(image);
    std::vector<double> v;
    if (grayscale_ && r.channels() == 3) {
        v.resize(static_cast<std::size_t>(size_) * size_);
        for (std::size_t i = 0; i < v.size(); ++i) {
            const auto d = r.data();
            v[i] = 0.299 * d[3 * i] + 0.587 * d[3 * i + 1] + 0.114 * d[3 * i + 2];
        }
    } else {
        v.assign(r.data().begin(), r.data().end());
    }
    if (centred_) {
        double mean = 0.0;
        for (double x : v) mean += x;
        mean /= static_cast<double>(v.size());
        for (double& x : v) x -= mean;
    }
    return v;
}

std::vector<double> ThumbnailEmbedder::embed(const Image& image) const {
    auto v = features(image);
    double n = 0.0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    if (!(n > 1e-12)) throw BackendError("image has no content to embed");
    for (double& x : v) x /= n;
    return v;
}

std::optional<Raster> ThumbnailEmbedder::vjp(const Image& image, std::span<const double> cot) const {
    auto v = features(image);
    if (cot.size() != v.size()) throw InvalidArgument("embedder cotangent has the wrong length");
    double n = 0.0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    if (!(n > 1e-12)) throw BackendError("image has no content to embed");
    double proj = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) proj += cot[i] * v[i] / n;
    std::vector<double> g(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) g[i] = (cot[i] - proj * v[i] / n) / n;
    if (centred_) {
        double mean = 0.0;
        for (double x : g) mean += x;
        mean /= static_cast<double>(g.size());
        for (double& x : g) x -= mean;
    }
    const int ch = image.channels();
    Raster thumb(size_, size_, ch);
    auto td = thumb.data();
    if (grayscale_ && ch == 3) {
        for (std::size_t i = 0; i < g.size(); ++i) {
            td[3 * i] = 0.299 * g[i];
            td[3 * i + 1] = 0.587 * g[i];
            td[3 * i + 2] = 0.114 * g[i];
        }
    } else {
        std::copy(g.begin(), g.end(), td.begin());
    }
    LinearSampler s(image.height(), image.width(), Box{0, 0, image.width(), image.height()}, size_, size_);
    return s.transpose(thumb, ch);
}

namespace {

struct Region {
    double x0, x1, y0, y1;  // fractions of the face crop
};

// Right eye, left eye, nose, right and left mouth corner (image-left first).
constexpr std::array<Region, CentroidLandmarker::kLandmarks> kLandmarkRegions{{
    {0.20, 0.45, 0.30, 0.50},
    {0.55, 0.80, 0.30, 0.50},
    {0.40, 0.60, 0.45, 0.65},
    {0.30, 0.50, 0.65, 0.85},
    {0.50, 0.70, 0.65, 0.85},
}};

struct RegionPixels {
    int x0, x1, y0, y1;  // half-open
};

RegionPixels pixels_of(const Region& r, int h, int w) {
    RegionPixels p{static_cast<int>(std::floor(r.x0 * w)), static_cast<int>(std::ceil(r.x1 * w)),
                   static_cast<int>(std::floor(r.y0 * h)), static_cast<int>(std::ceil(r.y1 * h))};
    p.x1 = std::max(p.x1, p.x0 + 1);
    p.y1 = std::max(p.y1, p.y0 + 1);
    p.x1 = std::min(p.x1, w);
    p.y1 = std::min(p.y1, h);
    return p;
}

constexpr double kLandmarkFloor = 1e-6;

double pixel_luma(const Image& im, int y, int x) {
    return im.channels() == 3 ? luminance(im, y, x) : im.at(y, x, 0);
}

}  // namespace

Keypoints CentroidLandmarker::detect(const Image& face) const {
    if (face.empty()) throw BackendError("cannot detect landmarks on an empty image");
    Keypoints out;
    for (const auto& region : kLandmarkRegions) {
        const auto p = pixels_of(region, face.height(), face.width());
        double sw = 0.0, sx = 0.0, sy = 0.0;
        for (int y = p.y0; y < p.y1; ++y)
            for (int x = p.x0; x < p.x1; ++x) {
                const double d = 1.0 - pixel_luma(face, y, x);
                const double w = d * d + kLandmarkFloor;
                sw += w;
                sx += w * (x + 0.5);
                sy += w * (y + 0.5);
            }
        out.push_back(Keypoint{{sx / sw, sy / sw}, 1.0});
    }
    return out;
}

std::optional<Raster> CentroidLandmarker::vjp(const Image& face, std::span<const Vec2> cot) const {
    if (cot.size() != kLandmarks) throw InvalidArgument("landmark cotangent needs one entry per landmark");
    const auto pts = detect(face);
    Raster g(face.height(), face.width(), face.channels());
    for (int j = 0; j < kLandmarks; ++j) {
        const auto p = pixels_of(kLandmarkRegions[j], face.height(), face.width());
        double sw = 0.0;
        for (int y = p.y0; y < p.y1; ++y)
            for (int x = p.x0; x < p.x1; ++x) {
                const double d = 1.0 - pixel_luma(face, y, x);
                sw += d * d + kLandmarkFloor;
            }
        const Vec2 c = pts[j].position;
        for (int y = p.y0; y < p.y1; ++y)
            for (int x = p.x0; x < p.x1; ++x) {
                const double d = 1.0 - pixel_luma(face, y, x);
                // d centroid / d w_p = (pos_p - centroid) / sum_w; d w / d luma = -2 d.
                const double dl = -2.0 * d * (cot[j].x * (x + 0.5 - c.x) + cot[j].y * (y + 0.5 - c.y)) / sw;
                if (face.channels() == 3) {
                    g.at(y, x, 0) += 0.299 * dl;
                    g.at(y, x, 1) += 0.587 * dl;
                    g.at(y, x, 2) += 0.114 * dl;
                } else {
                    g.at(y, x, 0) += dl;
                }
            }
    }
    return g;
}

int BumpPoseEstimator::joints() const { return geometry::kJointCount; }

Keypoints BumpPoseEstimator::canonical_layout(int height, int width) {
    static const auto model = geometry::make_toy_body_model();
    const auto cam = geometry::toy_camera(width, height);
    return geometry::project_joints(*model, model->default_params(), cam);
}

namespace {

struct PatchStats {
    int x0, x1, y0, y1;
    std::array<double, 3> mean;
};

PatchStats patch_around(const Image& im, const Vec2& p) {
    const int r = BumpPoseEstimator::kPatch / 2;
    const int cx = std::clamp(static_cast<int>(std::floor(p.x)), 0, im.width() - 1);
    const int cy = std::clamp(static_cast<int>(std::floor(p.y)), 0, im.height() - 1);
    PatchStats s{std::max(0, cx - r), std::min(im.width(), cx + r + 1), std::max(0, cy - r),
                 std::min(im.height(), cy + r + 1), {0, 0, 0}};
    const double n = static_cast<double>(s.x1 - s.x0) * (s.y1 - s.y0);
    for (int y = s.y0; y < s.y1; ++y)
        for (int x = s.x0; x < s.x1; ++x)
            for (int c = 0; c < im.channels(); ++c) s.mean[c] += im.at(y, x, c) / n;
    return s;
}

}  // namespace

Heatmap BumpPoseEstimator::estimate(const Image& image, const Keypoints* hint) const {
    if (image.empty()) throw BackendError("cannot estimate pose on an empty image");
    const Keypoints pts = hint ? *hint : canonical_layout(image.height(), image.width());
    const int J = joints();
    const int R = Heatmap::kResolution;
    Heatmap hm(J);
    for (int j = 0; j < J && j < static_cast<int>(pts.size()); ++j) {
        if (!pts[j].present()) continue;
        const Vec2 p = pts[j].position;
        if (!(p.x >= 0 && p.y >= 0 && p.x < image.width() && p.y < image.height())) continue;
        const auto patch = patch_around(image, p);
        double d2 = 0.0;
        for (int c = 0; c < image.channels(); ++c) d2 += (patch.mean[c] - background_) * (patch.mean[c] - background_);
        const double amp = 1.0 - std::exp(-d2 / (2.0 * kContrast * kContrast));
        const double qx = p.x * R / image.width(), qy = p.y * R / image.height();
        for (int y = 0; y < R; ++y)
            for (int x = 0; x < R; ++x) {
                const double dx = x + 0.5 - qx, dy = y + 0.5 - qy;
                hm.at(j, y, x) = amp * std::exp(-(dx * dx + dy * dy) / (2.0 * kSigma * kSigma));
            }
    }
    return hm;
}

std::optional<Raster> BumpPoseEstimator::vjp(const Image& image, const Keypoints* hint, const Heatmap& cot) const {
    const Keypoints pts = hint ? *hint : canonical_layout(image.height(), image.width());
    const int R = Heatmap::kResolution;
    if (cot.joints() != joints()) throw InvalidArgument("pose cotangent has the wrong joint count");
    Raster g(image.height(), image.width(), image.channels());
    for (int j = 0; j < joints() && j < static_cast<int>(pts.size()); ++j) {
        if (!pts[j].present()) continue;
        const Vec2 p = pts[j].position;
        if (!(p.x >= 0 && p.y >= 0 && p.x < image.width() && p.y < image.height())) continue;
        const double qx = p.x * R / image.width(), qy = p.y * R / image.height();
        double bump_dot = 0.0;
        for (int y = 0; y < R; ++y)
            for (int x = 0; x < R; ++x) {
                const double dx = x + 0.5 - qx, dy = y + 0.5 - qy;
                bump_dot += cot.at(j, y, x) * std::exp(-(dx * dx + dy * dy) / (2.0 * kSigma * kSigma));
            }
        const auto patch = patch_around(image, p);
        double d2 = 0.0;
        for (int c = 0; c < image.channels(); ++c) d2 += (patch.mean[c] - background_) * (patch.mean[c] - background_);
        const double k2 = kContrast * kContrast;
        const double e = std::exp(-d2 / (2.0 * k2));
        const double n = static_cast<double>(patch.x1 - patch.x0) * (patch.y1 - patch.y0);
        for (int c = 0; c < image.channels(); ++c) {
            const double dm = bump_dot * e * (patch.mean[c] - background_) / k2 / n;
            for (int y = patch.y0; y < patch.y1; ++y)
                for (int x = patch.x0; x < patch.x1; ++x) g.at(y, x, c) += dm;
        }
    }
    return g;
}

// ---- registry ------------------------------------------------------------

namespace {

std::mutex& registry_mutex() {
    static std::mutex m;
    return m;
}

std::map<std::string, BackendFactory>& registry() {
    static std::map<std::string, BackendFactory> r = [] {
        std::map<std::string, BackendFactory> init;
        init["toy"] = [](const std::map<std::string, double>& o) -> std::shared_ptr<const Backend> {
            ToyBackendOptions opt;
            for (const auto& [k, v] : o) {
                if (k == "seed") opt.seed = static_cast<std::uint64_t>(v);
                else if (k == "embedding_dim") opt.embedding_dim = static_cast<std::size_t>(v);
                else if (k == "detail_std") opt.detail_std = v;
                else if (k == "offset_std") opt.offset_std = v;
                else if (k == "embedding_gain") opt.embedding_gain = v;
                else if (k == "background") opt.background = v;
                else throw ConfigError("toy backend: unknown option \"" + k + "\"");
            }
            return std::make_shared<ToyBackend>(opt);
        };
        return init;
    }();
    return r;
}

}  // namespace

void register_backend(const std::string& id, BackendFactory factory) {
    std::lock_guard lock(registry_mutex());
    registry()[id] = std::move(factory);
}

std::vector<std::string> registered_backends() {
    std::lock_guard lock(registry_mutex());
    std::vector<std::string> ids;
    for (const auto& [k, v] : registry()) ids.push_back(k);
    return ids;
}

std::shared_ptr<const Backend> create_backend(const std::string& id, const std::map<std::string, double>& options) {
    BackendFactory f;
    {
        std::lock_guard lock(registry_mutex());
        auto it = registry().find(id);
        if (it == registry().end()) {
            std::string known;
            for (const auto& [k, v] : registry()) known += (known.empty() ? "" : ", ") + k;
            throw ConfigError("unknown backend \"" + id + "\"; registered: " + known);
        }
        f = it->second;
    }
    return f(options);
}

}  // namespace diffbody::diffusion
