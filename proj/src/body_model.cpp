#include "diffbody/body_model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "diffbody/error.hpp"
#include "diffbody/render.hpp"

namespace diffbody::geometry {
namespace {

constexpr double kRestHeight = 1.70;
constexpr double kRestWeight = 65.0;
constexpr double kHeightPerUnit = 0.10;
constexpr double kWeightPerUnit = 10.0;
constexpr int kRingSegments = 12;
constexpr int kRootFrame = -1;

struct Segment {
    Vec3 a;  // proximal end (rotation pivot), rest pose, unit scale
    Vec3 b;  // distal end
    double rx;
    double rz;
    BodyPart label;
    int pose_joint;
    int parent;  // index into segments, or kRootFrame
};

enum SegmentId { STorso, SHead, SLUpperArm, SLForearm, SRUpperArm, SRForearm, SLThigh, SLShin, SRThigh, SRShin };

const std::array<Segment, 10>& segments() {
    using J = ToyBodyModel::PoseJoint;
    static const std::array<Segment, 10> s = {{
        {{0, 0.95, 0}, {0, 1.45, 0}, 0.16, 0.10, BodyPart::Torso, J::Spine, kRootFrame},
        {{0, 1.47, 0}, {0, 1.60, 0}, 0.095, 0.095, BodyPart::Head, J::Neck, STorso},
        {{0.19, 1.40, 0}, {0.25, 1.13, 0}, 0.045, 0.045, BodyPart::LeftUpperArm, J::LShoulder, STorso},
        {{0.25, 1.13, 0}, {0.30, 0.87, 0}, 0.038, 0.038, BodyPart::LeftForearm, J::LElbow, SLUpperArm},
        {{-0.19, 1.40, 0}, {-0.25, 1.13, 0}, 0.045, 0.045, BodyPart::RightUpperArm, J::RShoulder, STorso},
        {{-0.25, 1.13, 0}, {-0.30, 0.87, 0}, 0.038, 0.038, BodyPart::RightForearm, J::RElbow, SRUpperArm},
        {{0.09, 0.92, 0}, {0.10, 0.50, 0}, 0.07, 0.07, BodyPart::LeftThigh, J::LHip, kRootFrame},
        {{0.10, 0.50, 0}, {0.10, 0.08, 0}, 0.05, 0.05, BodyPart::LeftShin, J::LKnee, SLThigh},
        {{-0.09, 0.92, 0}, {-0.10, 0.50, 0}, 0.07, 0.07, BodyPart::RightThigh, J::RHip, kRootFrame},
        {{-0.10, 0.50, 0}, {-0.10, 0.08, 0}, 0.05, 0.05, BodyPart::RightShin, J::RKnee, SRThigh},
    }};
    return s;
}

const Vec3 kHeadCenter{0, 1.535, 0};

// Keypoint rest positions and the segment frame each one rides on.
struct JointAnchor {
    Vec3 rest;
    int segment;
};

const std::array<JointAnchor, kJointCount>& joint_anchors() {
    static const std::array<JointAnchor, kJointCount> a = {{
        {{0, 1.545, 0.095}, SHead},     // nose
        {{0, 1.45, 0}, STorso},         // neck
        {{-0.19, 1.40, 0}, SRUpperArm}, // r shoulder
        {{-0.25, 1.13, 0}, SRForearm},  // r elbow
        {{-0.30, 0.87, 0}, SRForearm},  // r wrist
        {{0.19, 1.40, 0}, SLUpperArm},  // l shoulder
        {{0.25, 1.13, 0}, SLForearm},   // l elbow
        {{0.30, 0.87, 0}, SLForearm},   // l wrist
        {{-0.09, 0.92, 0}, SRThigh},    // r hip
        {{-0.10, 0.50, 0}, SRShin},     // r knee
        {{-0.10, 0.08, 0}, SRShin},     // r ankle
        {{0.09, 0.92, 0}, SLThigh},     // l hip
        {{0.10, 0.50, 0}, SLShin},      // l knee
        {{0.10, 0.08, 0}, SLShin},      // l ankle
        {{-0.035, 1.57, 0.085}, SHead}, // r eye
        {{0.035, 1.57, 0.085}, SHead},  // l eye
        {{-0.095, 1.55, 0}, SHead},     // r ear
        {{0.095, 1.55, 0}, SHead},      // l ear
    }};
    return a;
}

// Orthonormal frame with `d` along the bone and `e1` as close to world x as possible.
void bone_frame(const Vec3& d, Vec3& e1, Vec3& e2) {
    Vec3 x{1, 0, 0};
    if (std::abs(dot(x, d)) > 0.9) x = {0, 0, 1};
    e1 = normalized(x - d * dot(x, d));
    e2 = cross(d, e1);
}

// Capsule vertices: pole A, three cap rings at A, three cap rings at B, pole B.
std::vector<Vec3> capsule_vertices(const Segment& s, double girth) {
    const Vec3 axis = s.b - s.a;
    const Vec3 d = normalized(axis);
    Vec3 e1, e2;
    bone_frame(d, e1, e2);
    const double rx = s.rx * girth, rz = s.rz * girth;
    const double r_axial = 0.5 * (rx + rz);
    constexpr double pi = std::numbers::pi;
    const std::array<double, 3> phis = {pi / 6, pi / 3, pi / 2};

    std::vector<Vec3> v;
    v.push_back(s.a - d * r_axial);
    auto ring = [&](const Vec3& center, double phi, double axial_sign) {
        for (int k = 0; k < kRingSegments; ++k) {
            const double th = 2 * pi * k / kRingSegments;
            v.push_back(center + e1 * (rx * std::sin(phi) * std::cos(th)) + e2 * (rz * std::sin(phi) * std::sin(th)) +
                        d * (axial_sign * r_axial * std::cos(phi)));
        }
    };
    for (double phi : phis) ring(s.a, phi, -1.0);
    for (auto it = phis.rbegin(); it != phis.rend(); ++it) ring(s.b, *it, 1.0);
    v.push_back(s.b + d * r_axial);
    return v;
}

struct Topology {
    std::vector<std::array<int, 3>> triangles;
    std::vector<int> labels;
    std::vector<int> vertex_segment;
};

int face_or_head(const Vec3& centroid_rest) {
    const Vec3 d = centroid_rest - kHeadCenter;
    const double n = norm(d);
    if (n > 0 && d.z > 0.45 * n && d.y < 0.6 * n) return label_of(BodyPart::Face);
    return label_of(BodyPart::Head);
}

const Topology& topology() {
    static const Topology topo = [] {
        Topology t;
        int base = 0;
        for (int si = 0; si < static_cast<int>(segments().size()); ++si) {
            const Segment& s = segments()[si];
            const auto v = capsule_vertices(s, 1.0);
            const int n = static_cast<int>(v.size());
            std::vector<std::array<int, 3>> local;
            const int rings = 6;
            auto idx = [&](int r, int k) { return 1 + r * kRingSegments + (k % kRingSegments); };
            for (int k = 0; k < kRingSegments; ++k) local.push_back({0, idx(0, k + 1), idx(0, k)});
            for (int r = 0; r + 1 < rings; ++r)
                for (int k = 0; k < kRingSegments; ++k) {
                    local.push_back({idx(r, k), idx(r, k + 1), idx(r + 1, k + 1)});
                    local.push_back({idx(r, k), idx(r + 1, k + 1), idx(r + 1, k)});
                }
            for (int k = 0; k < kRingSegments; ++k) local.push_back({n - 1, idx(rings - 1, k), idx(rings - 1, k + 1)});

            const Vec3 axis = s.b - s.a;
            for (auto tri : local) {
                const Vec3 c = (v[tri[0]] + v[tri[1]] + v[tri[2]]) / 3.0;
                const double along = std::clamp(dot(c - s.a, axis) / dot(axis, axis), 0.0, 1.0);
                const Vec3 outward = c - (s.a + axis * along);
                const Vec3 nrm = cross(v[tri[1]] - v[tri[0]], v[tri[2]] - v[tri[0]]);
                if (dot(nrm, outward) < 0) std::swap(tri[1], tri[2]);
                t.triangles.push_back({tri[0] + base, tri[1] + base, tri[2] + base});
                t.labels.push_back(s.label == BodyPart::Head ? face_or_head(c) : label_of(s.label));
            }
            t.vertex_segment.insert(t.vertex_segment.end(), n, si);
            base += n;
        }
        return t;
    }();
    return topo;
}

double girth_for(double height_m, double weight_kg) {
    const double bmi = weight_kg / (height_m * height_m);
    const double rest_bmi = kRestWeight / (kRestHeight * kRestHeight);
    return std::sqrt(bmi / rest_bmi);
}

std::vector<Vec3> rest_unit_vertices(double girth) {
    std::vector<Vec3> out;
    for (const auto& s : segments()) {
        const auto v = capsule_vertices(s, girth);
        out.insert(out.end(), v.begin(), v.end());
    }
    return out;
}

double vertical_extent(const std::vector<Vec3>& v) {
    auto [lo, hi] = std::minmax_element(v.begin(), v.end(), [](const Vec3& a, const Vec3& b) { return a.y < b.y; });
    return hi->y - lo->y;
}

struct Frames {
    std::array<Mat3, 10> rotation;
    std::array<Vec3, 10> pivot;  // posed world position of segment.a (unit scale)
};

Frames pose_frames(const BodyParams& p) {
    Frames f;
    for (std::size_t si = 0; si < segments().size(); ++si) {
        const Segment& s = segments()[si];
        const int j = s.pose_joint;
        const Mat3 local = rotation_euler_xyz({p.pose[3 * j], p.pose[3 * j + 1], p.pose[3 * j + 2]});
        if (s.parent == kRootFrame) {
            f.rotation[si] = local;
            f.pivot[si] = s.a;
        } else {
            const Segment& ps = segments()[s.parent];
            f.rotation[si] = f.rotation[s.parent] * local;
            f.pivot[si] = f.pivot[s.parent] + f.rotation[s.parent] * (s.a - ps.a);
        }
    }
    return f;
}

void check_params(const BodyModel& m, const BodyParams& p) {
    if (static_cast<int>(p.pose.size()) != m.pose_dim()) throw GeometryError("pose vector has wrong dimension");
    if (static_cast<int>(p.shape.size()) != m.shape_dim()) throw GeometryError("shape vector has wrong dimension");
    for (double v : p.pose)
        if (!std::isfinite(v)) throw GeometryError("pose must be finite");
    for (double v : p.shape)
        if (!std::isfinite(v)) throw GeometryError("shape must be finite");
    if (!(p.height_m > 0) || !(p.weight_kg > 0)) throw GeometryError("height and weight must be positive");
}

struct Placement3d {
    double scale;
    Mat3 global;
    Vec3 translation;
    Vec3 apply(const Vec3& unit) const { return global * (unit * scale) + translation; }
};

Placement3d placement_for(const ToyBodyModel& m, const BodyParams& p) {
    const double h = m.height_of(p.shape), w = m.weight_of(p.shape);
    if (!(h > 0) || !(w > 0)) throw GeometryError("shape coefficients give non-positive height or weight");
    const double girth = girth_for(h, w);
    const double scale = h / vertical_extent(rest_unit_vertices(girth));
    return {scale, rotation_euler_xyz(p.global_rotation), p.global_translation};
}

}  // namespace

const std::vector<std::pair<int, int>>& skeleton_bones() {
    static const std::vector<std::pair<int, int>> bones = {
        {1, 2}, {2, 3}, {3, 4}, {1, 5}, {5, 6}, {6, 7}, {1, 8}, {8, 9}, {9, 10},
        {1, 11}, {11, 12}, {12, 13}, {1, 0}, {0, 14}, {14, 16}, {0, 15}, {15, 17}};
    return bones;
}

BodyParams ToyBodyModel::default_params() const {
    BodyParams p;
    p.pose.assign(pose_dim(), 0.0);
    p.shape.assign(shape_dim(), 0.0);
    p.height_m = kRestHeight;
    p.weight_kg = kRestWeight;
    return p;
}

std::vector<double> ToyBodyModel::shape_for(double height_m, double weight_kg) const {
    return {(height_m - kRestHeight) / kHeightPerUnit, (weight_kg - kRestWeight) / kWeightPerUnit};
}

double ToyBodyModel::height_of(const std::vector<double>& shape) const { return kRestHeight + kHeightPerUnit * shape.at(0); }
double ToyBodyModel::weight_of(const std::vector<double>& shape) const { return kRestWeight + kWeightPerUnit * shape.at(1); }

std::vector<JointLimit> ToyBodyModel::joint_limits() const {
    constexpr double pi = std::numbers::pi;
    std::vector<JointLimit> lim(kPoseJoints, JointLimit{{-pi, -pi, -pi}, {pi, pi, pi}});
    lim[Spine] = {{-0.8, -1.2, -0.6}, {0.8, 1.2, 0.6}};
    lim[Neck] = {{-0.8, -1.4, -0.7}, {0.8, 1.4, 0.7}};
    lim[LElbow] = {{-2.6, -0.6, -2.8}, {0.0, 0.6, 2.8}};
    lim[RElbow] = {{-2.6, -0.6, -2.8}, {0.0, 0.6, 2.8}};
    lim[LKnee] = {{0.0, -0.3, -2.6}, {2.6, 0.3, 2.6}};
    lim[RKnee] = {{0.0, -0.3, -2.6}, {2.6, 0.3, 2.6}};
    return lim;
}

std::vector<Vec3> ToyBodyModel::rest_vertices(const BodyParams& p) const {
    check_params(*this, p);
    const double h = height_of(p.shape), w = weight_of(p.shape);
    auto v = rest_unit_vertices(girth_for(h, w));
    const double scale = h / vertical_extent(v);
    for (auto& x : v) x = x * scale;
    return v;
}

TexturedMesh ToyBodyModel::build(const BodyParams& p) const {
    check_params(*this, p);
    const Placement3d place = placement_for(*this, p);
    const double h = height_of(p.shape), w = weight_of(p.shape);
    const auto rest = rest_unit_vertices(girth_for(h, w));
    const Frames f = pose_frames(p);
    const Topology& topo = topology();

    TexturedMesh m;
    m.vertices.resize(rest.size());
    for (std::size_t i = 0; i < rest.size(); ++i) {
        const int si = topo.vertex_segment[i];
        const Vec3 posed = f.pivot[si] + f.rotation[si] * (rest[i] - segments()[si].a);
        m.vertices[i] = place.apply(posed);
    }
    m.triangles = topo.triangles;
    m.part_labels = topo.labels;
    return m;
}

std::vector<Vec3> ToyBodyModel::joints(const BodyParams& p) const {
    check_params(*this, p);
    const Placement3d place = placement_for(*this, p);
    const Frames f = pose_frames(p);
    std::vector<Vec3> out;
    for (const auto& a : joint_anchors()) {
        const Vec3 posed = f.pivot[a.segment] + f.rotation[a.segment] * (a.rest - segments()[a.segment].a);
        out.push_back(place.apply(posed));
    }
    return out;
}

Vec3 ToyBodyModel::head_forward(const BodyParams& p) const {
    check_params(*this, p);
    const Frames f = pose_frames(p);
    return normalized(rotation_euler_xyz(p.global_rotation) * (f.rotation[SHead] * Vec3{0, 0, 1}));
}

std::shared_ptr<const BodyModel> make_toy_body_model() { return std::make_shared<ToyBodyModel>(); }

Keypoints project_joints(const BodyModel& model, const BodyParams& p, const Camera& camera) {
    Keypoints out;
    for (const auto& j : model.joints(p)) {
        const auto uv = project_point(camera, j);
        out.push_back(uv ? Keypoint{*uv, 1.0} : Keypoint{{0, 0}, 0.0});
    }
    return flag_out_of_bounds(std::move(out), camera.height, camera.width);
}

namespace {

struct IkBone {
    int pose_joint;
    int from;
    int to;
};

const std::vector<IkBone>& ik_bones() {
    using J = ToyBodyModel::PoseJoint;
    using K = Joint;
    static const std::vector<IkBone> b = {
        {J::LShoulder, int(K::LShoulder), int(K::LElbow)}, {J::LElbow, int(K::LElbow), int(K::LWrist)},
        {J::RShoulder, int(K::RShoulder), int(K::RElbow)}, {J::RElbow, int(K::RElbow), int(K::RWrist)},
        {J::LHip, int(K::LHip), int(K::LKnee)},            {J::LKnee, int(K::LKnee), int(K::LAnkle)},
        {J::RHip, int(K::RHip), int(K::RKnee)},            {J::RKnee, int(K::RKnee), int(K::RAnkle)},
        {J::Neck, int(K::Neck), int(K::Nose)},
    };
    return b;
}

Vec2 midpoint(const Vec2& a, const Vec2& b) { return {(a.x + b.x) / 2, (a.y + b.y) / 2}; }

double signed_angle(const Vec2& a, const Vec2& b) {
    return std::atan2(a.x * b.y - a.y * b.x, a.x * b.x + a.y * b.y);
}

void fit_translation(const BodyModel& model, BodyParams& p, const Keypoints& target, const Camera& cam) {
    const auto& rh = target[int(Joint::RHip)];
    const auto& lh = target[int(Joint::LHip)];
    if (!rh.present() || !lh.present()) return;
    const Vec2 want = midpoint(rh.position, lh.position);
    for (int it = 0; it < 4; ++it) {
        const auto js = model.joints(p);
        const Vec3 pelvis = (js[int(Joint::RHip)] + js[int(Joint::LHip)]) * 0.5;
        const auto have = project_point(cam, pelvis);
        if (!have) return;
        const double depth = cam.to_camera(pelvis).z;
        // Camera x/y offsets become world translations through R^T.
        const Vec3 cam_delta{(want.x - have->x) * depth / cam.fx, (want.y - have->y) * depth / cam.fy, 0.0};
        p.global_translation += cam.rotation.transposed() * cam_delta;
    }
}

void fit_bones(const BodyModel& model, BodyParams& p, const Keypoints& target, const Camera& cam) {
    const Vec2 hips_target = midpoint(target[int(Joint::RHip)].position, target[int(Joint::LHip)].position);
    auto bone_error = [&](const IkBone* bone, double theta, int joint_slot) {
        BodyParams q = p;
        q.pose[joint_slot] = theta;
        const auto js = model.joints(q);
        Vec2 from, to, want_from, want_to;
        if (bone) {
            const auto a = project_point(cam, js[bone->from]);
            const auto b = project_point(cam, js[bone->to]);
            if (!a || !b) return 0.0;
            from = *a;
            to = *b;
            want_from = target[bone->from].position;
            want_to = target[bone->to].position;
        } else {
            const auto a = project_point(cam, (js[int(Joint::RHip)] + js[int(Joint::LHip)]) * 0.5);
            const auto b = project_point(cam, js[int(Joint::Neck)]);
            if (!a || !b) return 0.0;
            from = *a;
            to = *b;
            want_from = hips_target;
            want_to = target[int(Joint::Neck)].position;
        }
        return signed_angle({to.x - from.x, to.y - from.y}, {want_to.x - want_from.x, want_to.y - want_from.y});
    };
    auto solve = [&](const IkBone* bone, int slot) {
        double theta = p.pose[slot];
        for (int it = 0; it < 10; ++it) {
            const double e = bone_error(bone, theta, slot);
            if (std::abs(e) < 1e-10) break;
            constexpr double h = 1e-5;
            const double de = (bone_error(bone, theta + h, slot) - bone_error(bone, theta - h, slot)) / (2 * h);
            if (std::abs(de) < 1e-9) break;
            theta -= std::clamp(e / de, -1.0, 1.0);
        }
        p.pose[slot] = theta;
    };
    const bool spine_ok = target[int(Joint::RHip)].present() && target[int(Joint::LHip)].present() &&
                          target[int(Joint::Neck)].present();
    if (spine_ok) solve(nullptr, 3 * ToyBodyModel::Spine + 2);
    for (const auto& bone : ik_bones())
        if (target[bone.from].present() && target[bone.to].present()) solve(&bone, 3 * bone.pose_joint + 2);
}

bool keypoints_match(const Keypoints& a, const Keypoints& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].present() != b[i].present()) return false;
        if (!a[i].present()) continue;
        if (std::abs(a[i].position.x - b[i].position.x) > 1e-9 || std::abs(a[i].position.y - b[i].position.y) > 1e-9)
            return false;
    }
    return true;
}

void clamp_to_limits(const BodyModel& model, BodyParams& p, std::vector<Warning>& warnings) {
    const auto limits = model.joint_limits();
    for (std::size_t j = 0; j < limits.size(); ++j)
        for (int a = 0; a < 3; ++a) {
            double& v = p.pose[3 * j + a];
            const double lo = limits[j].lo[a], hi = limits[j].hi[a];
            if (v < lo || v > hi) {
                const double c = std::clamp(v, lo, hi);
                warnings.push_back({"joint_limit", "pose[" + std::to_string(3 * j + a) + "] clamped from " +
                                                       std::to_string(v) + " to " + std::to_string(c)});
                v = c;
            }
        }
}

}  // namespace

EditResult edit_params(const BodyModel& model, const BodyParams& p, const PoseTarget& target_pose, double height_m,
                       double weight_kg, const Camera& camera) {
    if (!(height_m > 0) || !(weight_kg > 0)) throw GeometryError("target height and weight must be positive");
    check_params(model, p);
    EditResult r{p, {}};
    if (height_m != p.height_m || weight_kg != p.weight_kg) {
        r.params.shape = model.shape_for(height_m, weight_kg);
        r.params.height_m = height_m;
        r.params.weight_kg = weight_kg;
    }
    if (const auto* rot = std::get_if<std::vector<double>>(&target_pose)) {
        if (static_cast<int>(rot->size()) != model.pose_dim())
            throw GeometryError("target pose has wrong dimension");
        if (*rot != p.pose) r.params.pose = *rot;
    } else {
        const auto& kps = std::get<Keypoints>(target_pose);
        if (static_cast<int>(kps.size()) != kJointCount) throw GeometryError("target keypoints must have 18 entries");
        if (!keypoints_match(kps, project_joints(model, r.params, camera))) {
            for (int round = 0; round < 3; ++round) {
                fit_translation(model, r.params, kps, camera);
                fit_bones(model, r.params, kps, camera);
            }
            fit_translation(model, r.params, kps, camera);
        }
    }
    clamp_to_limits(model, r.params, r.warnings);
    return r;
}

BodyParams fit_toy_body(const BodyModel& model, const Mask& silhouette, const Keypoints& joints, const Camera& camera) {
    const int H = silhouette.height(), W = silhouette.width();
    auto stats = [&](const Mask& m) {
        int top = H, bottom = -1;
        std::size_t area = 0;
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                if (m.at(y, x)) {
                    top = std::min(top, y);
                    bottom = std::max(bottom, y);
                    ++area;
                }
        return std::pair<double, double>{bottom >= top ? bottom - top + 1.0 : 0.0, static_cast<double>(area)};
    };
    const auto [want_extent, want_area] = stats(silhouette);
    auto render_stats = [&](const BodyParams& q) {
        const auto frags = rasterize(model.build(q), camera, W, H);
        Mask m(H, W);
        for (std::size_t i = 0; i < frags.triangle.size(); ++i) m.data()[i] = frags.triangle[i] >= 0;
        return stats(m);
    };
    auto golden = [](auto f, double lo, double hi) {
        const double g = (std::sqrt(5.0) - 1) / 2;
        double a = lo, b = hi, c = b - g * (b - a), d = a + g * (b - a);
        double fc = f(c), fd = f(d);
        for (int i = 0; i < 40; ++i) {
            if (fc < fd) {
                b = d, d = c, fd = fc, c = b - g * (b - a), fc = f(c);
            } else {
                a = c, c = d, fc = fd, d = a + g * (b - a), fd = f(d);
            }
        }
        return (a + b) / 2;
    };
    auto set_shape = [&](BodyParams& q, double h, double w) {
        q.height_m = h;
        q.weight_kg = w;
        q.shape = model.shape_for(h, w);
    };

    BodyParams p = model.default_params();
    for (int round = 0; round < 3; ++round) {
        fit_translation(model, p, joints, camera);
        fit_bones(model, p, joints, camera);
        fit_translation(model, p, joints, camera);
        const double h = golden(
            [&](double hh) {
                BodyParams q = p;
                set_shape(q, hh, p.weight_kg * (hh * hh) / (p.height_m * p.height_m));
                fit_translation(model, q, joints, camera);
                return std::abs(render_stats(q).first - want_extent);
            },
            0.5, 2.5);
        set_shape(p, h, p.weight_kg * (h * h) / (p.height_m * p.height_m));
        fit_translation(model, p, joints, camera);
        const double w = golden(
            [&](double ww) {
                BodyParams q = p;
                set_shape(q, p.height_m, ww);
                return std::abs(render_stats(q).second - want_area);
            },
            20.0, 200.0);
        set_shape(p, p.height_m, w);
    }
    std::vector<Warning> ignored;
    clamp_to_limits(model, p, ignored);
    return p;
}

Camera toy_camera(int width, int height) {
    const double distance = 3.0;
    return Camera::looking_down_negative_z(width, height, 1.45 * height, {0.0, 0.86, 0.0}, distance);
}

}  // namespace diffbody::geometry
