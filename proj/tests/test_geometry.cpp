#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "diffbody/body_model.hpp"
#include "diffbody/error.hpp"
#include "diffbody/fit_io.hpp"
#include "diffbody/regions.hpp"
#include "diffbody/render.hpp"
#include "diffbody/texture.hpp"
#include "diffbody/visibility.hpp"
#include "support.hpp"
#include "visibility_oracle.hpp"

using namespace diffbody;
using namespace diffbody::geometry;
using testing_support::random_image;

namespace {

double vertical_extent(const TexturedMesh& m) {
    double lo = 1e9, hi = -1e9;
    for (const auto& v : m.vertices) {
        lo = std::min(lo, v.y);
        hi = std::max(hi, v.y);
    }
    return hi - lo;
}

TexturedMesh single_triangle(const Vec3& a, const Vec3& b, const Vec3& c, int label = 1) {
    TexturedMesh m;
    m.vertices = {a, b, c};
    m.triangles = {{0, 1, 2}};
    m.part_labels = {label};
    return m;
}

}  // namespace

TEST_CASE("pinhole projection") {
    const Camera cam = Camera::looking_down_negative_z(100, 80, 50.0, {0, 0, 0}, 2.0);
    const auto p = project_point(cam, {0.4, 0.2, 0.0});
    REQUIRE(p);
    CHECK(p->x == doctest::Approx(50 + 50 * 0.4 / 2));
    CHECK(p->y == doctest::Approx(40 - 50 * 0.2 / 2));
    CHECK_FALSE(project_point(cam, {0, 0, 2.0}));
    CHECK_FALSE(project_point(cam, {0, 0, 3.0}));
    const Vec3 c = cam.center();
    CHECK(c.z == doctest::Approx(2.0));
}

TEST_CASE("euler rotations are orthonormal") {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-3, 3);
    for (int k = 0; k < 20; ++k) {
        const Mat3 r = rotation_euler_xyz({u(rng), u(rng), u(rng)});
        const Mat3 i = r * r.transposed();
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) CHECK(i(a, b) == doctest::Approx(a == b ? 1.0 : 0.0).epsilon(1e-12));
    }
}

TEST_CASE("toy body model") {
    const auto model = make_toy_body_model();
    const BodyParams p = model->default_params();
    SUBCASE("build is deterministic and topology is fixed") {
        const auto a = model->build(p);
        CHECK(a == model->build(p));
        CHECK(a.triangle_count() == 10u * 144);
        BodyParams q = p;
        q.pose[3 * ToyBodyModel::LElbow + 2] = 1.0;
        q.shape = model->shape_for(1.9, 90);
        const auto b = model->build(q);
        CHECK(b.triangles == a.triangles);
        CHECK(b.part_labels == a.part_labels);
        CHECK(b.vertices != a.vertices);
        a.validate();
    }
    SUBCASE("rest height is exact") {
        for (double h : {1.5, 1.7, 1.95}) {
            BodyParams q = p;
            q.shape = model->shape_for(h, 70);
            q.height_m = h;
            CHECK(vertical_extent(model->build(q)) == doctest::Approx(h).epsilon(1e-9));
        }
    }
    SUBCASE("shape calibration inverts") {
        const auto s = model->shape_for(1.83, 77.5);
        CHECK(model->height_of(s) == doctest::Approx(1.83));
        CHECK(model->weight_of(s) == doctest::Approx(77.5));
    }
    SUBCASE("heavier bodies are wider") {
        BodyParams thin = p, heavy = p;
        thin.shape = model->shape_for(1.7, 50);
        heavy.shape = model->shape_for(1.7, 100);
        auto width = [](const TexturedMesh& m) {
            double lo = 1e9, hi = -1e9;
            for (const auto& v : m.vertices) {
                lo = std::min(lo, v.z);
                hi = std::max(hi, v.z);
            }
            return hi - lo;
        };
        CHECK(width(model->build(heavy)) > width(model->build(thin)));
    }
    SUBCASE("the body faces +z") {
        const Vec3 f = model->head_forward(p);
        CHECK(f.z == doctest::Approx(1.0));
    }
    SUBCASE("identity edit is bit-identical") {
        const Camera cam = toy_camera(128, 128);
        const auto r = edit_params(*model, p, p.pose, p.height_m, p.weight_kg, cam);
        CHECK(r.params == p);
        CHECK(r.warnings.empty());
    }
    SUBCASE("joint limits clamp with a warning per angle") {
        const Camera cam = toy_camera(128, 128);
        auto pose = p.pose;
        pose[3 * ToyBodyModel::LKnee + 0] = -1.0;
        pose[3 * ToyBodyModel::Spine + 1] = 3.0;
        const auto r = edit_params(*model, p, pose, p.height_m, p.weight_kg, cam);
        CHECK(r.warnings.size() == 2);
        CHECK(r.params.pose[3 * ToyBodyModel::LKnee] == 0.0);
        CHECK(r.params.pose[3 * ToyBodyModel::Spine + 1] == doctest::Approx(1.2));
    }
    SUBCASE("shape edit reaches the target attributes") {
        const Camera cam = toy_camera(128, 128);
        const auto r = edit_params(*model, p, p.pose, 1.85, 90, cam);
        CHECK(model->height_of(r.params.shape) == doctest::Approx(1.85));
        CHECK(model->weight_of(r.params.shape) == doctest::Approx(90));
        CHECK(r.params.height_m == doctest::Approx(1.85));
        CHECK(r.params.weight_kg == doctest::Approx(90));
    }
    SUBCASE("keypoint targets are reached by inverse kinematics") {
        const Camera cam = toy_camera(256, 256);
        BodyParams target = p;
        target.pose[3 * ToyBodyModel::LShoulder + 2] = 0.9;
        target.pose[3 * ToyBodyModel::RElbow + 2] = -0.6;
        const Keypoints goal = project_joints(*model, target, cam);
        const auto r = edit_params(*model, p, goal, p.height_m, p.weight_kg, cam);
        const Keypoints got = project_joints(*model, r.params, cam);
        double worst = 0;
        for (std::size_t j = 0; j < goal.size(); ++j)
            worst = std::max(worst, std::hypot(got[j].position.x - goal[j].position.x,
                                               got[j].position.y - goal[j].position.y));
        CHECK(worst < 1.5);
    }
    SUBCASE("projected joints") {
        const auto k = project_joints(*model, p, toy_camera(128, 128));
        CHECK(k.size() == kJointCount);
        for (const auto& j : k) CHECK(j.present());
    }
}

TEST_CASE("toy fit recovers a rendered subject") {
    const auto model = make_toy_body_model();
    const Camera cam = toy_camera(128, 128);
    BodyParams truth = model->default_params();
    truth.shape = model->shape_for(1.78, 74);
    truth.height_m = 1.78;
    truth.weight_kg = 74;
    truth.pose[3 * ToyBodyModel::LShoulder + 2] = 0.3;
    const auto render = render_shaded(model->build(truth), cam, [](int, const std::array<double, 3>&) {
        return std::array<double, 3>{0.2, 0.2, 0.2};
    }, 128, 128);
    const auto fit = fit_toy_body(*model, render.silhouette(), project_joints(*model, truth, cam), cam);
    CHECK(fit.height_m == doctest::Approx(1.78).epsilon(0.02));
    CHECK(fit.weight_kg == doctest::Approx(74).epsilon(0.1));
}

TEST_CASE("rasterizer coverage matches a pixel-centre oracle") {
    const Camera cam = Camera::looking_down_negative_z(32, 32, 32.0, {0, 0, 0}, 2.0);
    const auto mesh = single_triangle({-0.6, -0.5, 0}, {0.7, -0.4, 0}, {0.1, 0.8, 0});
    const auto f = rasterize(mesh, cam, 32, 32);
    std::array<Vec2, 3> s;
    for (int i = 0; i < 3; ++i) s[i] = *project_point(cam, mesh.vertices[i]);
    auto edge = [](Vec2 a, Vec2 b, double x, double y) { return (b.x - a.x) * (y - a.y) - (b.y - a.y) * (x - a.x); };
    int covered = 0;
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
            const double px = x + 0.5, py = y + 0.5;
            const double e0 = edge(s[0], s[1], px, py), e1 = edge(s[1], s[2], px, py), e2 = edge(s[2], s[0], px, py);
            const bool inside = (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
            CHECK((f.at(y, x) == 0) == inside);
            covered += inside;
            if (inside) {
                const auto& b = f.barycentric[y * 32 + x];
                CHECK(b[0] + b[1] + b[2] == doctest::Approx(1.0));
            }
        }
    CHECK(covered > 50);
}

TEST_CASE("z-buffer keeps the nearer surface") {
    const Camera cam = Camera::looking_down_negative_z(16, 16, 16.0, {0, 0, 0}, 2.0);
    TexturedMesh m;
    m.vertices = {{-1, -1, 0}, {1, -1, 0}, {0, 1, 0}, {-1, -1, 0.5}, {1, -1, 0.5}, {0, 1, 0.5}};
    m.triangles = {{0, 1, 2}, {3, 4, 5}};
    m.part_labels = {1, 2};
    const auto f = rasterize(m, cam, 16, 16);
    CHECK(f.at(8, 8) == 1);
    const auto r = render_shaded(m, cam, [](int t, const std::array<double, 3>&) {
        return std::array<double, 3>{t == 0 ? 0.0 : 1.0, 0.0, 0.0};
    }, 16, 16, 0.25);
    CHECK(r.part_labels.at(8, 8) == 2);
    CHECK(r.image.at(8, 8, 0) == 1.0);
    CHECK(r.part_labels.at(0, 0) == kBackgroundLabel);
    CHECK(r.image.at(0, 0, 1) == 0.25);
}

TEST_CASE("render marks pixels of invisible triangles") {
    const Camera cam = Camera::looking_down_negative_z(16, 16, 16.0, {0, 0, 0}, 2.0);
    auto m = single_triangle({-1, -1, 0}, {1, -1, 0}, {0, 1, 0});
    m.uv = {{0.1, 0.1}, {0.9, 0.1}, {0.5, 0.9}};
    m.uv_valid = {1, 1, 1};
    m.visibility = {Visibility::Invisible};
    const auto r = render(m, cam, Image(8, 8, 3, 0.7), 16, 16);
    CHECK(r.invisible_mask.count() == r.silhouette().count());
    CHECK(r.image.at(8, 8, 0) == doctest::Approx(0.7));
}

TEST_CASE("reflect padding follows the mirror rule") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 30; ++trial) {
        const int h = 5, w = 23;
        const Image im = random_image(h, w, 3, trial);
        const Mask m = testing_support::random_mask(h, w, 0.3, 100 + trial);
        const int band = 1 + static_cast<int>(rng() % 6);
        const Image out = reflect_pad(im, m, band);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                int src = x;
                if (!m.at(y, x)) {
                    int dl = 0, dr = 0;
                    for (int k = x - 1; k >= 0; --k)
                        if (m.at(y, k)) {
                            dl = x - k;
                            break;
                        }
                    for (int k = x + 1; k < w; ++k)
                        if (m.at(y, k)) {
                            dr = k - x;
                            break;
                        }
                    const bool left = dl > 0 && (dr == 0 || dl <= dr);
                    const int d = left ? dl : dr;
                    if (d == 0 || d > band) {
                        src = x;
                    } else if (left) {
                        const int edge = x - d;
                        int begin = edge;
                        while (begin - 1 >= 0 && m.at(y, begin - 1)) --begin;
                        src = std::max(begin, edge - (d - 1));
                    } else {
                        const int edge = x + d;
                        int end = edge;
                        while (end + 1 < w && m.at(y, end + 1)) ++end;
                        src = std::min(end, edge + (d - 1));
                    }
                }
                for (int c = 0; c < 3; ++c) CHECK(out.at(y, x, c) == im.at(y, src, c));
            }
    }
    CHECK_THROWS_AS(reflect_pad(Image(2, 2, 3), Mask(2, 3), 2), InvalidArgument);
}

TEST_CASE("projective texturing") {
    const Camera cam = Camera::looking_down_negative_z(40, 20, 20.0, {0, 0, 0}, 2.0);
    TexturedMesh m = single_triangle({-0.5, -0.5, 0}, {0.5, -0.5, 0}, {0, 0.5, 0});
    m.vertices.push_back({0, 0, 5});  // behind the camera
    m.triangles.push_back({0, 1, 3});
    m.part_labels.push_back(1);
    const Image tex(20, 40, 3, 0.3);
    const auto t = project_texture(m, cam, tex);
    REQUIRE(t.has_uv());
    const auto p = *project_point(cam, m.vertices[1]);
    CHECK(t.uv[1].x == doctest::Approx(p.x / 40));
    CHECK(t.uv[1].y == doctest::Approx(p.y / 20));
    CHECK(t.uv_valid[3] == 0);
    const auto v = label_visibility(t, cam);
    CHECK(v.visibility[0] == Visibility::Visible);
    CHECK(v.visibility[1] == Visibility::Invisible);
}

TEST_CASE("visibility on a sphere: the far hemisphere is hidden") {
    const auto sphere = make_icosphere(2, {0, 0, -3}, 1.0);
    const auto v = label_visibility(sphere, testing_support::origin_camera());
    int visible = 0;
    for (std::size_t t = 0; t < sphere.triangles.size(); ++t) {
        const auto& tri = sphere.triangles[t];
        const double z = (sphere.vertices[tri[0]].z + sphere.vertices[tri[1]].z + sphere.vertices[tri[2]].z) / 3;
        if (v.visibility[t] == Visibility::Visible) {
            ++visible;
            CHECK(z > -3.0);
        }
    }
    CHECK(visible > 0);
    CHECK(visible < static_cast<int>(sphere.triangles.size()) / 2);
}

TEST_CASE("visibility equals the brute-force oracle on random scenes") {
    const Camera cam = testing_support::origin_camera();
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
        const auto mesh = testing_support::random_visibility_mesh(seed, 300);
        const double eps = default_occlusion_epsilon(mesh);
        const auto got = label_visibility(mesh, cam);
        CHECK(got.visibility == testing_support::brute_visibility(mesh, cam, eps));
    }
}

TEST_CASE("visibility of a soup placed occluder") {
    const Camera cam = testing_support::origin_camera();
    TexturedMesh m = single_triangle({-1, -1, -4}, {1, -1, -4}, {0, 1, -4});
    const auto near = single_triangle({-1, -1, -2}, {1, -1, -2}, {0, 1, -2});
    m.vertices.insert(m.vertices.end(), near.vertices.begin(), near.vertices.end());
    m.triangles.push_back({3, 4, 5});
    m.part_labels.push_back(1);
    const auto v = label_visibility(m, cam);
    CHECK(v.visibility[0] == Visibility::Invisible);
    CHECK(v.visibility[1] == Visibility::Visible);
}

TEST_CASE("face border mask") {
    CHECK(face_border_width(512) == 102);
    const Mask m = face_border_mask(512, 512);
    for (int x = 0; x < 512; ++x) {
        CHECK(m.at(256, x) == ((x >= 102 && x < 512 - 102) ? 1 : 0));
        CHECK(m.at(x, 256) == ((x >= 102 && x < 512 - 102) ? 1 : 0));
    }
    const Mask s = face_border_mask(10, 10);
    CHECK(s.count() == 36);
    for (int y = 0; y < 10; ++y)
        for (int x = 0; x < 10; ++x) CHECK(s.at(y, x) == ((y >= 2 && y < 8 && x >= 2 && x < 8) ? 1 : 0));
}

TEST_CASE("part crops") {
    LabelMap l(40, 60);
    for (int y = 10; y < 20; ++y)
        for (int x = 30; x < 36; ++x) l.at(y, x) = label_of(BodyPart::Face);
    const Box b = part_box(l, label_of(BodyPart::Face), 0.25);
    CHECK(b.width == b.height);
    CHECK(b.width >= 15);
    CHECK(b.x <= 30);
    CHECK(b.x + b.width >= 36);
    CHECK(b.y <= 10);
    CHECK(b.y + b.height >= 20);
    const Image im = random_image(40, 60, 3, 8);
    const Crop c = crop_part(im, l, label_of(BodyPart::Face), 32);
    CHECK(c.image.height() == 32);
    CHECK(c.image.width() == 32);
    CHECK(crop_with(im, c.placement) == c.image);
    const Image back = uncrop(c.image, c.placement);
    CHECK(back.height() == c.placement.box.height);
    CHECK_THROWS_AS(crop_part(im, l, label_of(BodyPart::Torso), 32), GeometryError);
    const Mask full(32, 32, 1);
    CHECK(uncrop_mask(full, c.placement).count() ==
          static_cast<std::size_t>(c.placement.box.width * c.placement.box.height));
}

TEST_CASE("crop at the image edge is clipped") {
    LabelMap l(20, 20);
    l.at(0, 0) = 3;
    l.at(1, 1) = 3;
    const Box b = part_box(l, 3, 0.5);
    CHECK(b.x >= 0);
    CHECK(b.y >= 0);
}

TEST_CASE("fit files round trip and name missing keys") {
    const auto model = make_toy_body_model();
    Fit f{model->default_params(), toy_camera(96, 128)};
    f.params.pose[4] = 0.125;
    f.params.global_translation = {0.1, -0.2, 0.3};
    CHECK(parse_fit(serialize_fit(f)) == f);
    try {
        (void)parse_fit(R"({"pose": [], "shape": [0, 0], "weight_kg": 60})");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("height_m") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_fit("not json"), ConfigError);
}

TEST_CASE("mesh OBJ round trip keeps labels and visibility") {
    const auto model = make_toy_body_model();
    const Camera cam = toy_camera(64, 64);
    auto m = label_visibility(project_texture(model->build(model->default_params()), cam, Image(64, 64, 3)), cam);
    const auto back = parse_mesh_obj(serialize_mesh_obj(m));
    CHECK(back.triangles == m.triangles);
    CHECK(back.part_labels == m.part_labels);
    CHECK(back.visibility == m.visibility);
    REQUIRE(back.vertices.size() == m.vertices.size());
    for (std::size_t i = 0; i < m.vertices.size(); ++i) CHECK(norm(back.vertices[i] - m.vertices[i]) < 1e-9);
}

TEST_CASE("surface attributes transfer between poses") {
    const auto model = make_toy_body_model();
    const Camera cam = toy_camera(64, 64);
    const auto src = label_visibility(project_texture(model->build(model->default_params()), cam, Image(64, 64, 3)), cam);
    BodyParams q = model->default_params();
    q.pose[3 * ToyBodyModel::RShoulder + 2] = -1.0;
    const auto dst = transfer_surface_attributes(model->build(q), src);
    CHECK(dst.uv == src.uv);
    CHECK(dst.visibility == src.visibility);
    CHECK(dst.vertices == model->build(q).vertices);
    TexturedMesh wrong = single_triangle({0, 0, 0}, {1, 0, 0}, {0, 1, 0});
    CHECK_THROWS_AS(transfer_surface_attributes(wrong, src), GeometryError);
}
