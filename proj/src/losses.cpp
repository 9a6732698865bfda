#include "diffbody/losses.hpp"

#include <cmath>

#include "diffbody/error.hpp"
#include "diffbody/mesh.hpp"
#include "diffbody/regions.hpp"
#include "diffbody/resample.hpp"

namespace diffbody::losses {

namespace {

struct AwLinear {
    double A;
    double C;
};

AwLinear aw_linear(double y, const AwParams& prm) {
    const double q = prm.alpha - y;
    const double r = prm.theta / prm.epsilon;
    const double A = prm.omega * (1.0 / (1.0 + std::pow(r, q))) * q * std::pow(r, q - 1.0) / prm.epsilon;
    const double C = prm.theta * A - prm.omega * std::log1p(std::pow(r, q));
    return {A, C};
}

}  // namespace

double aw_element(double p, double y, const AwParams& prm) {
    const double d = std::abs(y - p);
    if (d < prm.theta) return prm.omega * std::log1p(std::pow(d / prm.epsilon, prm.alpha - y));
    const auto [A, C] = aw_linear(y, prm);
    return A * d - C;
}

double aw_element_grad(double p, double y, const AwParams& prm) {
    const double diff = p - y;
    const double d = std::abs(diff);
    if (d == 0.0) return 0.0;
    const double sign = diff > 0.0 ? 1.0 : -1.0;
    if (d < prm.theta) {
        const double q = prm.alpha - y;
        const double u = d / prm.epsilon;
        return sign * prm.omega * q * std::pow(u, q - 1.0) / prm.epsilon / (1.0 + std::pow(u, q));
    }
    return sign * aw_linear(y, prm).A;
}

double aw_loss(const Heatmap& pred, const Heatmap& target, const AwParams& prm) {
    if (pred.joints() != target.joints()) throw InvalidArgument("aw_loss: heatmap joint counts differ");
    auto p = pred.data();
    auto y = target.data();
    double s = 0.0;
    if (p.empty()) throw InvalidArgument("aw_loss: empty heatmap");
    for (std::size_t i = 0; i < p.size(); ++i) s += aw_element(p[i], y[i], prm);
    return s / static_cast<double>(p.size());
}

std::vector<double> aw_loss_grad(const Heatmap& pred, const Heatmap& target, const AwParams& prm) {
    if (pred.joints() != target.joints()) throw InvalidArgument("aw_loss: heatmap joint counts differ");
    auto p = pred.data();
    auto y = target.data();
    std::vector<double> g(p.size());
    const double n = static_cast<double>(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) g[i] = aw_element_grad(p[i], y[i], prm) / n;
    return g;
}

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw BackendError("embedding sizes differ");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

std::vector<double> negated(std::vector<double> v) {
    for (double& x : v) x = -x;
    return v;
}

}  // namespace

ValueGrad clip_image_loss(const Image& reference, const Image& output, const diffusion::Embedder& embedder,
                          bool want_grad) {
    const auto r = embedder.embed(reference);
    ValueGrad out{-dot(r, embedder.embed(output)), std::nullopt};
    if (want_grad) out.grad = embedder.vjp(output, negated(r));
    return out;
}

ValueGrad id_loss(const Image& reference_face, const Image& output_face, const diffusion::Embedder& embedder,
                  bool want_grad) {
    const auto r = embedder.embed(reference_face);
    ValueGrad out{1.0 - dot(r, embedder.embed(output_face)), std::nullopt};
    if (want_grad) out.grad = embedder.vjp(output_face, negated(r));
    return out;
}

ValueGrad clip_part_loss(const Image& reference, const LabelMap& reference_labels, const Image& output,
                         const LabelMap& output_labels, const diffusion::Embedder& embedder, bool want_grad,
                         int crop_size) {
    if (reference_labels.height() != reference.height() || reference_labels.width() != reference.width() ||
        output_labels.height() != output.height() || output_labels.width() != output.width())
        throw InvalidArgument("clip_part_loss: label map does not match its image");
    ValueGrad out;
    if (want_grad) out.grad = Raster(output.height(), output.width(), output.channels());
    int shared = 0;
    for (int part = 1; part < geometry::kPartLabelCount; ++part) {
        if (!reference_labels.contains(part) || !output_labels.contains(part)) continue;
        ++shared;
        const Mask gate_ref = reference_labels.select(part);
        const Mask gate_out = output_labels.select(part);
        const LinearSampler s_ref(reference.height(), reference.width(), geometry::part_box(reference_labels, part, 0.0),
                                  crop_size, crop_size);
        const LinearSampler s_out(output.height(), output.width(), geometry::part_box(output_labels, part, 0.0),
                                  crop_size, crop_size);
        const Image crop_ref = Image::clamped(s_ref.apply(reference, &gate_ref));
        const Image crop_out = Image::clamped(s_out.apply(output, &gate_out));
        const auto r = embedder.embed(crop_ref);
        out.value -= dot(r, embedder.embed(crop_out));
        if (out.grad) {
            const auto g = embedder.vjp(crop_out, negated(r));
            if (!g) {
                out.grad.reset();
                continue;
            }
            const Raster back = s_out.transpose(*g, output.channels(), &gate_out);
            auto dst = out.grad->data();
            auto src = back.data();
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
        }
    }
    if (shared == 0) throw InvalidArgument("clip_part_loss: no body part is present in both images");
    return out;
}

double keypoint_loss(const Keypoints& pred, const Keypoints& target) {
    if (pred.size() != target.size()) throw InvalidArgument("keypoint_loss: point counts differ");
    double s = 0.0;
    int n = 0;
    for (std::size_t i = 0; i < pred.size() && i < target.size(); ++i) {
        if (!pred[i].present() || !target[i].present()) continue;
        const double dx = pred[i].position.x - target[i].position.x;
        const double dy = pred[i].position.y - target[i].position.y;
        s += dx * dx + dy * dy;
        ++n;
    }
    if (n == 0) throw InvalidArgument("keypoint_loss: no point is present in both sets");
    return s / (2.0 * n);
}

std::vector<Vec2> keypoint_loss_grad(const Keypoints& pred, const Keypoints& target) {
    if (pred.size() != target.size()) throw InvalidArgument("keypoint_loss: point counts differ");
    std::vector<Vec2> g(pred.size());
    int n = 0;
    for (std::size_t i = 0; i < pred.size() && i < target.size(); ++i)
        if (pred[i].present() && target[i].present()) ++n;
    if (n == 0) throw InvalidArgument("keypoint_loss: no point is present in both sets");
    for (std::size_t i = 0; i < pred.size() && i < target.size(); ++i) {
        if (!pred[i].present() || !target[i].present()) continue;
        g[i].x = (pred[i].position.x - target[i].position.x) / n;
        g[i].y = (pred[i].position.y - target[i].position.y) / n;
    }
    return g;
}

namespace {

Breakdown sum(std::vector<Component> cs) {
    Breakdown b{std::move(cs), 0.0};
    for (const auto& c : b.components) b.total += c.weight * c.value;
    return b;
}

}  // namespace

Breakdown total_fullbody(double aw, double clip, const LossWeights& w) {
    return sum({{"aw", aw, w.aw}, {"clip", clip, w.clip_body}});
}

Breakdown total_face(double id, double clip, double keypoint, bool shape_edit, const LossWeights& w) {
    const double wid = shape_edit ? w.shape_edit_face : w.id;
    const double wclip = shape_edit ? w.shape_edit_face : w.clip_face;
    return sum({{"id", id, wid}, {"clip", clip, wclip}, {"keypoint", keypoint, w.keypoint}});
}

}  // namespace diffbody::losses
