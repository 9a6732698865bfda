#include <cmath>
#include <random>

#include "doctest.h"
#include "diffbody/error.hpp"
#include "diffbody/losses.hpp"
#include "diffbody/toy_backend.hpp"
#include "support.hpp"

using namespace diffbody;
using namespace diffbody::losses;
using testing_support::random_image;

namespace {

Heatmap random_heatmap(int joints, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0, 1);
    Heatmap h(joints);
    for (double& v : h.data()) v = u(rng);
    return h;
}

// Unit vector picked by the image's mean red value; used to force chosen similarities.
class MeanSwitchEmbedder final : public diffusion::Embedder {
public:
    std::vector<double> embed(const Image& im) const override {
        double m = 0;
        for (int y = 0; y < im.height(); ++y)
            for (int x = 0; x < im.width(); ++x) m += im.at(y, x, 0);
        m /= im.height() * im.width();
        if (m < 0.25) return {1, 0, 0};
        if (m < 0.5) return {0, 1, 0};
        if (m < 0.75) return {0, 0, 1};
        return {-1, 0, 0};
    }
};

Image two_part_image(const std::array<double, 3>& top, const std::array<double, 3>& bottom, LabelMap& labels) {
    Image im(16, 16, 3, 0.5);
    labels = LabelMap(16, 16);
    for (int y = 0; y < 16; ++y)
        for (int x = 4; x < 12; ++x) {
            const bool t = y < 8;
            labels.at(y, x) = t ? 1 : 8;
            for (int c = 0; c < 3; ++c) im.at(y, x, c) = t ? top[c] : bottom[c];
        }
    return im;
}

double cosine(const std::array<double, 3>& a, const std::array<double, 3>& b) {
    double d = 0, na = 0, nb = 0;
    for (int c = 0; c < 3; ++c) {
        d += a[c] * b[c];
        na += a[c] * a[c];
        nb += b[c] * b[c];
    }
    return d / std::sqrt(na * nb);
}

}  // namespace

TEST_CASE("adaptive wing value") {
    const AwParams p;
    CHECK(aw_element(0.3, 0.3) == 0.0);
    const Heatmap h = random_heatmap(2, 1);
    CHECK(aw_loss(h, h) == 0.0);
    // Log branch evaluated directly: y = 0, d = 0.1.
    const double want = 14.0 * std::log(1.0 + std::pow(0.1, 2.1));
    CHECK(aw_element(0.1, 0.0, p) == doctest::Approx(want).epsilon(1e-14));
    CHECK(aw_element(0.1, 0.0, p) == doctest::Approx(0.1107666077).epsilon(1e-9));
    CHECK_THROWS_AS(aw_loss(Heatmap(2), Heatmap(3)), InvalidArgument);
}

TEST_CASE("adaptive wing linear branch uses the continuity constants") {
    const AwParams p;
    for (double y : {0.0, 0.3, 0.9}) {
        const double q = p.alpha - y, r = p.theta / p.epsilon;
        const double A = p.omega * (1.0 / (1.0 + std::pow(r, q))) * q * std::pow(r, q - 1.0) / p.epsilon;
        const double C = p.theta * A - p.omega * std::log1p(std::pow(r, q));
        for (double d : {0.5, 0.7, 1.0})
            CHECK(aw_element(y + d, y, p) == doctest::Approx(A * d - C).epsilon(1e-12));
    }
}

TEST_CASE("adaptive wing is C1 at the seam") {
    const AwParams p;
    for (int k = 0; k <= 100; ++k) {
        const double y = k / 100.0;
        const double below = aw_element(y + std::nextafter(p.theta, 0.0), y, p);
        const double at = aw_element(y + p.theta, y, p);
        CHECK(std::abs(below - at) < 1e-6);
        const double g1 = aw_element_grad(y + p.theta - 1e-9, y, p), g2 = aw_element_grad(y + p.theta + 1e-9, y, p);
        CHECK(std::abs(g1 - g2) < 1e-5 * std::max(1.0, std::abs(g1)));
    }
}

TEST_CASE("adaptive wing gradient matches finite differences") {
    const Heatmap a = random_heatmap(1, 2), y = random_heatmap(1, 3);
    const auto g = aw_loss_grad(a, y);
    std::mt19937_64 rng(4);
    const AwParams p;
    int checked = 0;
    for (int trial = 0; trial < 200 && checked < 40; ++trial) {
        const std::size_t i = rng() % a.data().size();
        const double d = std::abs(a.data()[i] - y.data()[i]);
        if (std::abs(d - p.theta) < 1e-3 || d < 1e-3) continue;
        const double h = 1e-6;
        Heatmap plus = a, minus = a;
        plus.data()[i] += h;
        minus.data()[i] -= h;
        const double fd = (aw_loss(plus, y) - aw_loss(minus, y)) / (2 * h);
        CHECK(g[i] == doctest::Approx(fd).epsilon(1e-4));
        ++checked;
    }
    CHECK(checked == 40);
}

TEST_CASE("part clip loss") {
    const diffusion::ThumbnailEmbedder emb(16, false, false);
    LabelMap lr, lo;
    const std::array<double, 3> a{0.8, 0.2, 0.1}, b{0.1, 0.3, 0.9}, c{0.5, 0.5, 0.2}, d{0.2, 0.9, 0.4};
    const Image ref = two_part_image(a, b, lr);
    SUBCASE("identity gives minus the number of parts") {
        CHECK(clip_part_loss(ref, lr, ref, lr, emb).value == doctest::Approx(-2.0));
    }
    SUBCASE("constant-colour parts give the hand cosine sum") {
        const Image out = two_part_image(c, d, lo);
        CHECK(clip_part_loss(ref, lr, out, lo, emb).value == doctest::Approx(-(cosine(a, c) + cosine(b, d))));
    }
    SUBCASE("orthogonal embeddings give zero") {
        const MeanSwitchEmbedder sw;
        const Image r2 = two_part_image({0.1, 0, 0}, {0.1, 0, 0}, lr);
        const Image o2 = two_part_image({0.4, 0, 0}, {0.6, 0, 0}, lo);
        CHECK(clip_part_loss(r2, lr, o2, lo, sw).value == 0.0);
        CHECK(clip_image_loss(Image(4, 4, 3, 0.1), Image(4, 4, 3, 0.3), sw).value == 0.0);
    }
    SUBCASE("only shared parts count") {
        const Image out = two_part_image(c, d, lo);
        LabelMap only_top = lo;
        for (int y = 8; y < 16; ++y)
            for (int x = 0; x < 16; ++x) only_top.at(y, x) = 0;
        CHECK(clip_part_loss(ref, lr, out, only_top, emb).value == doctest::Approx(-cosine(a, c)));
        CHECK_THROWS_AS(clip_part_loss(ref, lr, out, LabelMap(16, 16), emb), InvalidArgument);
    }
    SUBCASE("uniform intensity rescaling does not change the loss") {
        const Image out = random_image(16, 16, 3, 9);
        Image half = out;
        for (double& v : half.data()) v *= 0.5;
        CHECK(clip_part_loss(ref, lr, out, lr, emb).value ==
              doctest::Approx(clip_part_loss(ref, lr, half, lr, emb).value).epsilon(1e-12));
    }
    SUBCASE("bounded below by minus the number of parts") {
        for (std::uint64_t s = 0; s < 10; ++s) {
            const Image out = random_image(16, 16, 3, s);
            CHECK(clip_part_loss(ref, lr, out, lr, emb).value >= -2.0 - 1e-12);
        }
    }
}

TEST_CASE("part clip gradient matches finite differences") {
    const diffusion::ThumbnailEmbedder emb(16, false, false);
    LabelMap lr;
    const Image ref = two_part_image({0.8, 0.2, 0.1}, {0.1, 0.3, 0.9}, lr);
    Image out = random_image(16, 16, 3, 5);
    for (double& v : out.data()) v = 0.2 + 0.6 * v;
    LabelMap lo = lr;
    lo.at(3, 3) = 1;
    const auto vg = clip_part_loss(ref, lr, out, lo, emb, true);
    REQUIRE(vg.grad);
    std::mt19937_64 rng(6);
    for (int k = 0; k < 20; ++k) {
        const std::size_t i = rng() % out.size();
        const double h = 1e-6;
        Image p = out, m = out;
        p.data()[i] += h;
        m.data()[i] -= h;
        const double fd = (clip_part_loss(ref, lr, p, lo, emb).value - clip_part_loss(ref, lr, m, lo, emb).value) / (2 * h);
        CHECK(vg.grad->data()[i] == doctest::Approx(fd).epsilon(1e-5).scale(1e-6));
    }
}

TEST_CASE("keypoint loss") {
    Keypoints a(5, Keypoint{{10, 10}, 1.0});
    for (int i = 0; i < 5; ++i) a[i].position = {10.0 * i, 3.0 * i};
    CHECK(keypoint_loss(a, a) == 0.0);
    Keypoints b = a;
    b[2].position.x += 3;
    b[2].position.y += 4;
    CHECK(keypoint_loss(b, a) == doctest::Approx(2.5).epsilon(1e-15));
    Keypoints c = b;
    c[0].confidence = 0;
    CHECK(keypoint_loss(c, a) == doctest::Approx(25.0 / 8));
    CHECK_THROWS_AS(keypoint_loss(Keypoints(4), a), InvalidArgument);
    Keypoints none = a;
    for (auto& k : none) k.confidence = 0;
    CHECK_THROWS_AS(keypoint_loss(none, a), InvalidArgument);
    const auto g = keypoint_loss_grad(b, a);
    const double h = 1e-6;
    Keypoints p = b, m = b;
    p[2].position.y += h;
    m[2].position.y -= h;
    CHECK(g[2].y == doctest::Approx((keypoint_loss(p, a) - keypoint_loss(m, a)) / (2 * h)).epsilon(1e-6));
    CHECK(g[0].x == 0.0);
}

TEST_CASE("identity loss") {
    const diffusion::ThumbnailEmbedder id(16, true, true);
    const Image f = random_image(16, 16, 3, 1);
    CHECK(id_loss(f, f, id).value == doctest::Approx(0.0).scale(1.0));
    const MeanSwitchEmbedder sw;
    CHECK(id_loss(Image(4, 4, 3, 0.1), Image(4, 4, 3, 0.9), sw).value == 2.0);
    // Hand cosine of mean-centred luma at thumbnail resolution.
    const Image g = random_image(16, 16, 3, 2);
    std::vector<double> u, v;
    double mu = 0, mv = 0;
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
            u.push_back(luminance(f, y, x));
            v.push_back(luminance(g, y, x));
            mu += u.back();
            mv += v.back();
        }
    double d = 0, nu = 0, nv = 0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        const double a = u[i] - mu / 256, b = v[i] - mv / 256;
        d += a * b;
        nu += a * a;
        nv += b * b;
    }
    CHECK(id_loss(f, g, id).value == doctest::Approx(1.0 - d / std::sqrt(nu * nv)).epsilon(1e-12));
    CHECK(id_loss(f, g, id).value >= 0.0);
}

TEST_CASE("loss totals use the fixed weights") {
    const auto fb = total_fullbody(1.0, 0.5);
    CHECK(fb.total == doctest::Approx(1.002).epsilon(1e-15));
    REQUIRE(fb.components.size() == 2);
    CHECK(fb.components[0].name == "aw");
    CHECK(fb.components[0].weight == 0.002);
    CHECK(fb.components[1].weight == 2.0);
    CHECK(total_face(1, 1, 1, false).total == doctest::Approx(20.1).epsilon(1e-15));
    CHECK(total_face(1, 1, 1, true).total == doctest::Approx(10.1).epsilon(1e-15));
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-3, 3);
    for (int k = 0; k < 50; ++k) {
        const double i = u(rng), c = u(rng), p = u(rng);
        CHECK(total_face(i, c, p, false).total == doctest::Approx(10 * i + 10 * c + 0.1 * p));
        CHECK(total_face(i, c, p, true).total == doctest::Approx(5 * i + 5 * c + 0.1 * p));
        CHECK(total_fullbody(i, c).total == doctest::Approx(0.002 * i + 2 * c));
    }
}
