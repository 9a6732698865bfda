#include <Eigen/Dense>
#include <cmath>
#include <numeric>
#include <set>

#include "doctest.h"
#include "diffbody/body_model.hpp"
#include "diffbody/error.hpp"
#include "diffbody/refinement.hpp"
#include "diffbody/toy_backend.hpp"
#include "support.hpp"

using namespace diffbody;
using namespace diffbody::diffusion;
using testing_support::random_image;
using testing_support::random_mask;

namespace {

TextEmbedding random_embedding(std::size_t d, std::uint64_t seed, double scale = 1.0) {
    SeededNoise n(seed);
    TextEmbedding e;
    e.values.resize(d);
    for (double& v : e.values) v = scale * n.normal();
    return e;
}

double dot(const Raster& a, const Raster& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i] * b.data()[i];
    return s;
}

class FixedDenoiser final : public Denoiser {
public:
    explicit FixedDenoiser(double v) : v_(v) {}
    LatentMap predict_noise(const LatentMap& x, int, const Conditioning&) const override {
        return LatentMap(x.height(), x.width(), x.channels(), v_);
    }

private:
    double v_;
};

}  // namespace

TEST_CASE("linear schedule constants") {
    const auto s = NoiseSchedule::linear();
    CHECK(s.steps() == 1000);
    CHECK(s.beta(1) == doctest::Approx(1e-4).epsilon(1e-12));
    CHECK(s.beta(1000) == doctest::Approx(2e-2).epsilon(1e-12));
    CHECK(s.alpha_bar(0) == 1.0);
    double log_ab = 0;
    for (int t = 1; t <= 1000; ++t) {
        const double beta = 1e-4 + (2e-2 - 1e-4) * (t - 1) / 999.0;
        CHECK(s.beta(t) == doctest::Approx(beta).epsilon(1e-12));
        log_ab += std::log1p(-beta);
        CHECK(s.alpha_bar(t) == doctest::Approx(std::exp(log_ab)).epsilon(1e-10));
        if (t > 1) {
            const double pv = (1 - s.alpha_bar(t - 1)) / (1 - s.alpha_bar(t)) * beta;
            CHECK(s.posterior_variance(t) == doctest::Approx(pv).epsilon(1e-12));
        }
    }
    CHECK(s.posterior_variance(1) == 0.0);
}

TEST_CASE("start step") {
    const auto s = NoiseSchedule::linear();
    CHECK(start_step(s, 0.3) == 300);
    CHECK(start_step(s, 1.0) == 1000);
    CHECK(start_step(s, 0.0004) == 0);
    CHECK_THROWS_AS(start_step(s, 0.0), InvalidArgument);
    CHECK_THROWS_AS(start_step(s, 1.01), InvalidArgument);
    CHECK_THROWS_AS(start_step(s, std::nan("")), InvalidArgument);
}

TEST_CASE("seed derivation") {
    CHECK(derive_seed(1, 2, 3) == derive_seed(1, 2, 3));
    std::set<std::uint64_t> seen;
    for (std::uint64_t a = 0; a < 50; ++a)
        for (std::uint64_t b = 0; b < 4; ++b) seen.insert(derive_seed(9, a, b));
    CHECK(seen.size() == 200);
}

TEST_CASE("forward trajectory statistics and determinism") {
    const auto s = NoiseSchedule::linear();
    LatentMap x0(32, 32, 48, 0.6);
    const auto traj = q_sample_trajectory(s, x0, 0.5, 77);
    CHECK(traj.t_start() == 500);
    CHECK(traj.size() == 501);
    CHECK(traj.at(0) == x0);
    CHECK(traj.at(123) == traj.at(123));
    for (int t : {1, 100, 300, 500}) {
        const LatentMap xt = traj.at(t);
        const double a = std::sqrt(s.alpha_bar(t)), b2 = 1 - s.alpha_bar(t);
        double mean = 0, var = 0;
        for (double v : xt.data()) mean += v;
        mean /= static_cast<double>(xt.size());
        for (double v : xt.data()) var += (v - mean) * (v - mean);
        var /= static_cast<double>(xt.size() - 1);
        const double n = static_cast<double>(xt.size());
        CHECK(std::abs(mean - a * 0.6) < 5 * std::sqrt(b2 / n));
        CHECK(std::abs(var / b2 - 1) < 5 * std::sqrt(2 / n));
    }
    // Noise of different steps is uncorrelated.
    const LatentMap e1 = traj.at(200), e2 = traj.at(201);
    const double a1 = std::sqrt(s.alpha_bar(200)), a2 = std::sqrt(s.alpha_bar(201));
    double c = 0, n1 = 0, n2 = 0;
    for (std::size_t i = 0; i < e1.size(); ++i) {
        const double u = e1.data()[i] - a1 * 0.6, v = e2.data()[i] - a2 * 0.6;
        c += u * v;
        n1 += u * u;
        n2 += v * v;
    }
    CHECK(std::abs(c / std::sqrt(n1 * n2)) < 0.05);
    const auto other = q_sample_trajectory(s, x0, 0.5, 78);
    CHECK_FALSE(other.at(10) == traj.at(10));
}

TEST_CASE("trajectory restore overwrites exactly the unmasked cells") {
    const auto s = NoiseSchedule::linear();
    LatentMap x0(4, 5, 3, 0.2);
    const NoiseTrajectory traj(s, x0, 30, 5);
    Mask m = random_mask(4, 5, 0.5, 1);
    LatentMap x(4, 5, 3, 9.0);
    traj.restore(17, x, m);
    const LatentMap ref = traj.at(17);
    for (int y = 0; y < 4; ++y)
        for (int xx = 0; xx < 5; ++xx)
            for (int c = 0; c < 3; ++c) CHECK(x.at(y, xx, c) == (m.at(y, xx) ? 9.0 : ref.at(y, xx, c)));
}

TEST_CASE("ancestral step arithmetic") {
    const auto s = NoiseSchedule::linear();
    LatentMap x(2, 2, 2, 0.7);
    ZeroNoise z;
    const FixedDenoiser d(0.25);
    const Conditioning cond;
    for (int t : {1, 2, 500}) {
        const LatentMap y = denoise_step(s, d, x, t, cond, z);
        const double want = (0.7 - s.beta(t) / std::sqrt(1 - s.alpha_bar(t)) * 0.25) / std::sqrt(s.alpha(t));
        for (double v : y.data()) CHECK(v == doctest::Approx(want).epsilon(1e-14));
    }
    SeededNoise n1(3), n2(3);
    const LatentMap a = denoise_step(s, d, x, 1, cond, n1);
    CHECK(denoise_step(s, d, x, 1, cond, z) == a);  // no noise at t = 1
    const LatentMap b = denoise_step(s, d, x, 50, cond, n2);
    CHECK_FALSE(b == denoise_step(s, d, x, 50, cond, z));
    const FixedDenoiser bad(std::nan(""));
    try {
        (void)denoise_step(s, bad, x, 42, cond, z);
        FAIL("expected BackendError");
    } catch (const BackendError& e) {
        CHECK(std::string(e.what()).find("42") != std::string::npos);
    }
}

TEST_CASE("toy codec") {
    const ToyCodec codec;
    CHECK(codec.factor() == 4);
    CHECK(codec.channels() == 48);
    const Image im = random_image(8, 12, 3, 1);
    const LatentMap z = codec.encode(im);
    CHECK(z.height() == 2);
    CHECK(z.width() == 3);
    CHECK(codec.decode(z) == im);
    for (int cy = 0; cy < 2; ++cy)
        for (int cx = 0; cx < 3; ++cx)
            for (int dy = 0; dy < 4; ++dy)
                for (int dx = 0; dx < 4; ++dx)
                    for (int c = 0; c < 3; ++c) {
                        const int k = (dy * 4 + dx) * 3 + c;
                        CHECK(z.at(cy, cx, k) == im.at(cy * 4 + dy, cx * 4 + dx, c));
                        int y, x, cc;
                        ToyCodec::pixel_of(cy, cx, k, y, x, cc);
                        CHECK((y == cy * 4 + dy && x == cx * 4 + dx && cc == c));
                    }
    const Image gray(4, 4, 1, 0.3);
    CHECK(codec.decode(codec.encode(gray)).at(2, 2, 2) == 0.3);
    CHECK_THROWS_AS(codec.encode(Image(5, 4, 3)), Error);
    LatentMap wild = z;
    wild.at(0, 0, 0) = 1.7;
    wild.at(0, 0, 1) = -0.2;
    const Image d = codec.decode(wild);
    CHECK(d.at(0, 0, 0) == 1.0);
    CHECK(d.at(0, 0, 1) == 0.0);
    const Raster cot = random_image(8, 12, 3, 2);
    const auto g = codec.decode_vjp(wild, cot);
    REQUIRE(g);
    CHECK(g->at(0, 0, 0) == 0.0);
    CHECK(g->at(0, 0, 1) == 0.0);
    CHECK(g->at(0, 0, 2) == cot.at(0, 0, 2));
    CHECK(g->at(1, 2, 47) == cot.at(7, 11, 2));
}

TEST_CASE("toy denoiser equals exact Gaussian conditioning") {
    const ToyBackend backend;
    const auto& opt = backend.options();
    const int H = 8, W = 8;
    LabelMap layout(H, W);
    for (int y = 0; y < H; ++y)
        for (int x = 4; x < W; ++x) layout.at(y, x) = 1;
    Conditioning cond;
    cond.embedding = random_embedding(opt.embedding_dim, 4, 0.5);
    cond.part_layout = layout;
    cond.guidance_scale = 1.5;
    const Raster base = backend.base_target(cond, H, W);
    std::vector<double> ge = cond.embedding.values;
    for (double& v : ge) v *= cond.guidance_scale;

    const int t = 250;
    const auto& s = backend.schedule();
    const double a = std::sqrt(s.alpha_bar(t)), b = std::sqrt(1 - s.alpha_bar(t));
    const LatentMap xt = [&] {
        LatentMap x(H / 4, W / 4, 48);
        SeededNoise n(8);
        for (double& v : x.data()) v = 0.5 * a + 0.3 * n.normal();
        return x;
    }();
    const LatentMap eps = backend.denoiser().predict_noise(xt, t, cond);

    // Each (label, colour) group: x0 = tau + delta 1 + detail, delta ~ N(0, S^2), detail ~ N(0, s^2 I).
    std::map<std::pair<int, int>, std::vector<std::size_t>> groups;
    std::vector<double> tau(xt.size());
    std::size_t i = 0;
    for (int cy = 0; cy < xt.height(); ++cy)
        for (int cx = 0; cx < xt.width(); ++cx)
            for (int k = 0; k < 48; ++k, ++i) {
                int y, x, c;
                ToyCodec::pixel_of(cy, cx, k, y, x, c);
                const int l = layout.at(y, x);
                tau[i] = base.at(y, x, c) + backend.shift(l, c, ge);
                groups[{l, c}].push_back(i);
            }
    CHECK(groups.size() == 6);
    const double S2 = opt.offset_std * opt.offset_std, s2 = opt.detail_std * opt.detail_std;
    for (const auto& [key, idx] : groups) {
        const int n = static_cast<int>(idx.size());
        const Eigen::MatrixXd C0 = S2 * Eigen::MatrixXd::Ones(n, n) + s2 * Eigen::MatrixXd::Identity(n, n);
        const Eigen::MatrixXd Ct = a * a * C0 + b * b * Eigen::MatrixXd::Identity(n, n);
        Eigen::VectorXd r(n), tv(n);
        for (int j = 0; j < n; ++j) {
            r[j] = xt.data()[idx[j]] - a * tau[idx[j]];
            tv[j] = tau[idx[j]];
        }
        const Eigen::VectorXd x0 = tv + a * C0 * Ct.ldlt().solve(r);
        for (int j = 0; j < n; ++j) {
            const double want = (xt.data()[idx[j]] - a * x0[j]) / b;
            CHECK(eps.data()[idx[j]] == doctest::Approx(want).epsilon(1e-9));
        }
    }
}

TEST_CASE("embedding shift scales with guidance and is linear") {
    const ToyBackend backend;
    const auto e1 = random_embedding(32, 1), e2 = random_embedding(32, 2);
    std::vector<double> sum(32);
    for (int k = 0; k < 32; ++k) sum[k] = 2 * e1.values[k] - e2.values[k];
    for (int l = 0; l < 12; ++l)
        for (int c = 0; c < 3; ++c)
            CHECK(backend.shift(l, c, sum) ==
                  doctest::Approx(2 * backend.shift(l, c, e1.values) - backend.shift(l, c, e2.values)));
    CHECK_THROWS_AS(backend.denoiser().predict_noise(LatentMap(1, 1, 48), 5, Conditioning{random_embedding(7, 1)}),
                    BackendError);
}

TEST_CASE("embedding vjp matches finite differences of the final latent") {
    const auto base = create_backend("toy");
    const Image input = random_image(16, 16, 3, 3);
    LabelMap layout(16, 16);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) layout.at(y, x) = (x / 4 + y / 8) % 3;
    Mask mask(16, 16);
    for (int y = 4; y < 12; ++y)
        for (int x = 2; x < 14; ++x) mask.at(y, x) = 1;
    refinement::RefinementConfig cfg;
    cfg.noise_strength = 0.05;
    cfg.guidance_scale = 1.3;
    refinement::RefineRequest rq{input, mask, random_embedding(32, 5, 0.3), {}, layout, Stage::Body};
    const auto out = refinement::refine_once(rq, cfg, *base, 11);
    LatentMap cot(4, 4, 48);
    SeededNoise n(12);
    for (double& v : cot.data()) v = n.normal();
    const auto g = base->embedding_vjp(out.trace, cot);
    REQUIRE(g);
    REQUIRE(g->dim() == 32);
    const double h = 1e-3;
    for (int k : {0, 7, 19, 31}) {
        auto plus = rq, minus = rq;
        plus.embedding.values[k] += h;
        minus.embedding.values[k] -= h;
        const double fd = (dot(refinement::refine_once(plus, cfg, *base, 11).final_latent, cot) -
                           dot(refinement::refine_once(minus, cfg, *base, 11).final_latent, cot)) /
                          (2 * h);
        CHECK(g->values[k] == doctest::Approx(fd).epsilon(1e-6).scale(1e-6));
    }
}

TEST_CASE("text encoder") {
    const auto b = create_backend("toy");
    const auto& enc = b->text_encoder();
    const auto e = enc.encode("photo of a sks man facing front");
    CHECK(e.dim() == enc.dim());
    double n = 0;
    for (double v : e.values) n += v * v;
    CHECK(n == doctest::Approx(1.0));
    CHECK(enc.encode("photo of a sks man facing front") == e);
    CHECK_FALSE(enc.encode("photo of a sks face facing front") == e);
    const auto x = enc.encode("a b"), y = enc.encode("b a");
    for (std::size_t k = 0; k < x.dim(); ++k) CHECK(x.values[k] == doctest::Approx(y.values[k]));
}

TEST_CASE("skeleton raster") {
    Keypoints k(geometry::kJointCount, Keypoint{{-5, -5}, 0.0});
    k[1] = {{2, 2}, 1.0};
    k[2] = {{9, 2}, 1.0};  // neck -> right shoulder
    const Image s = rasterize_skeleton(k, 12, 12);
    for (int x = 2; x <= 9; ++x) CHECK(s.at(2, x, 0) == 1.0);
    double total = 0;
    for (double v : s.data()) total += v;
    CHECK(total == 8 * 3);
}

TEST_CASE("registry") {
    const auto ids = registered_backends();
    CHECK(std::find(ids.begin(), ids.end(), "toy") != ids.end());
    try {
        (void)create_backend("stable-diffusion");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("toy") != std::string::npos);
    }
    CHECK_THROWS_AS(create_backend("toy", {{"no_such_option", 1.0}}), ConfigError);
    const auto b = create_backend("toy", {{"detail_std", 0.05}});
    CHECK(dynamic_cast<const ToyBackend&>(*b).options().detail_std == 0.05);
    CHECK(b->id() == "toy");
}

TEST_CASE("personalization") {
    const ToyBackend b;
    Personalization p;
    p.reference = Image(8, 8, 3, 0.2);
    p.reference_labels = LabelMap(8, 8, 1);
    p.token = "";
    CHECK_THROWS_AS(b.personalize(p), InvalidArgument);
    p.token = "sks";
    const auto pb = b.personalize(p);
    const auto& stats = dynamic_cast<const ToyBackend&>(*pb).reference();
    REQUIRE(stats);
    CHECK(stats->part_present[1]);
    CHECK(stats->part_mean[1][0] == doctest::Approx(0.2));
    CHECK_FALSE(stats->part_present[2]);
    Conditioning cond;
    cond.part_layout = LabelMap(8, 8, 1);
    CHECK(dynamic_cast<const ToyBackend&>(*pb).base_target(cond, 8, 8).at(3, 3, 1) == doctest::Approx(0.2));
}

TEST_CASE("perception stand-ins have exact vjps") {
    const auto b = create_backend("toy");
    const Image im = random_image(24, 24, 3, 21);
    Raster dir(24, 24, 3);
    SeededNoise n(22);
    for (double& v : dir.data()) v = n.normal();
    const double h = 1e-5;
    // Keep the perturbation away from the clamp.
    Image mid = im;
    for (double& v : mid.data()) v = 0.1 + 0.8 * v;
    auto at = [&](double s) {
        Raster r = mid;
        for (std::size_t i = 0; i < r.size(); ++i) r.data()[i] += s * dir.data()[i];
        return Image::from_raster(r);
    };

    for (const Embedder* e : {&b->part_embedder(), &b->identity_embedder()}) {
        const auto phi = e->embed(mid);
        double nn = 0;
        for (double v : phi) nn += v * v;
        CHECK(nn == doctest::Approx(1.0));
        std::vector<double> cot(phi.size());
        for (double& v : cot) v = n.normal();
        const auto g = e->vjp(mid, cot);
        REQUIRE(g);
        const auto p = e->embed(at(h)), m = e->embed(at(-h));
        double fd = 0;
        for (std::size_t k = 0; k < cot.size(); ++k) fd += cot[k] * (p[k] - m[k]) / (2 * h);
        CHECK(dot(*g, dir) == doctest::Approx(fd).epsilon(1e-5));
    }
    {
        const auto& lm = b->face_landmarker();
        const auto pts = lm.detect(mid);
        CHECK(pts.size() == 5);
        std::vector<Vec2> cot(pts.size());
        for (auto& c : cot) c = {n.normal(), n.normal()};
        const auto g = lm.vjp(mid, cot);
        REQUIRE(g);
        const auto p = lm.detect(at(h)), m = lm.detect(at(-h));
        double fd = 0;
        for (std::size_t k = 0; k < cot.size(); ++k)
            fd += (cot[k].x * (p[k].position.x - m[k].position.x) + cot[k].y * (p[k].position.y - m[k].position.y)) /
                  (2 * h);
        CHECK(dot(*g, dir) == doctest::Approx(fd).epsilon(1e-5));
    }
    {
        const auto& pose = b->pose_estimator();
        CHECK(pose.joints() == geometry::kJointCount);
        const Keypoints hint = BumpPoseEstimator::canonical_layout(24, 24);
        const Heatmap hm = pose.estimate(mid, &hint);
        Heatmap cot(hm.joints());
        for (double& v : cot.data()) v = n.normal();
        const auto g = pose.vjp(mid, &hint, cot);
        REQUIRE(g);
        const Heatmap p = pose.estimate(at(h), &hint), m = pose.estimate(at(-h), &hint);
        double fd = 0;
        for (std::size_t k = 0; k < cot.data().size(); ++k) fd += cot.data()[k] * (p.data()[k] - m.data()[k]) / (2 * h);
        CHECK(dot(*g, dir) == doctest::Approx(fd).epsilon(1e-5));
    }
    CHECK_FALSE(b->orientation_detector().orientation(mid));
}

TEST_CASE("pose heatmap peaks at the hinted joints") {
    const auto b = create_backend("toy");
    Image im(64, 64, 3, 0.5);
    for (int y = 20; y < 40; ++y)
        for (int x = 20; x < 40; ++x) im.at(y, x, 0) = 0.9;
    Keypoints hint(geometry::kJointCount, Keypoint{{30, 30}, 1.0});
    hint[3] = {{10, 10}, 0.0};
    const Heatmap hm = b->pose_estimator().estimate(im, &hint);
    int by = 0, bx = 0;
    double best = -1;
    for (int y = 0; y < 128; ++y)
        for (int x = 0; x < 128; ++x)
            if (hm.at(0, y, x) > best) {
                best = hm.at(0, y, x);
                by = y;
                bx = x;
            }
    CHECK(std::abs(by - 60) <= 1);
    CHECK(std::abs(bx - 60) <= 1);
    double missing = 0;
    for (int y = 0; y < 128; ++y)
        for (int x = 0; x < 128; ++x) missing = std::max(missing, hm.at(3, y, x));
    CHECK(missing == 0.0);
    for (double v : hm.data()) CHECK((v >= 0.0 && v <= 1.0));
}
