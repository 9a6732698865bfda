#pragma once

#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "diffbody/camera.hpp"
#include "diffbody/image.hpp"
#include "diffbody/mesh.hpp"

namespace diffbody::geometry {

struct BodyParams {
    std::vector<double> pose;   // per-joint Euler XYZ rotations, 3 per joint
    std::vector<double> shape;  // shape coefficients
    double height_m = 1.70;
    double weight_kg = 65.0;
    Vec3 global_rotation{};     // Euler XYZ
    Vec3 global_translation{};

    bool operator==(const BodyParams&) const = default;
};

// Keypoint layout shared by the skeleton, pose estimator and conditioning
// (the 18-point OpenPose/COCO order).
enum class Joint : int {
    Nose, Neck, RShoulder, RElbow, RWrist, LShoulder, LElbow, LWrist, RHip, RKnee, RAnkle,
    LHip, LKnee, LAnkle, REye, LEye, REar, LEar,
};
inline constexpr int kJointCount = 18;
// Parent/child keypoint pairs used to draw skeletons.
const std::vector<std::pair<int, int>>& skeleton_bones();

struct JointLimit {
    Vec3 lo;
    Vec3 hi;
};

class BodyModel {
public:
    virtual ~BodyModel() = default;

    virtual std::string name() const = 0;
    virtual int pose_dim() const = 0;
    virtual int shape_dim() const = 0;
    virtual BodyParams default_params() const = 0;
    // Deterministic: the same params always produce a bit-identical mesh
    // (uv and visibility left empty). Topology never depends on params.
    virtual TexturedMesh build(const BodyParams& p) const = 0;
    // World positions of the kJointCount keypoints.
    virtual std::vector<Vec3> joints(const BodyParams& p) const = 0;

    // Attribute calibration of the shape space.
    virtual std::vector<double> shape_for(double height_m, double weight_kg) const = 0;
    virtual double height_of(const std::vector<double>& shape) const = 0;
    virtual double weight_of(const std::vector<double>& shape) const = 0;

    virtual std::vector<JointLimit> joint_limits() const = 0;
    // Unit forward direction of the head in world space.
    virtual Vec3 head_forward(const BodyParams& p) const = 0;
};

// Capsule-limb articulated figure: ten elliptic capsules (torso, head, two
// segments per limb), 144 triangles each. Shape axis 0 maps to height
// (1.70 m + 0.10 m per unit), axis 1 to weight (65 kg + 10 kg per unit). The
// rest-pose mesh is scaled so its vertical extent equals the height exactly;
// limb and torso girth scale with sqrt(BMI / BMI_rest).
//
// Pose joints (3 Euler angles each): spine, neck, l_shoulder, l_elbow,
// r_shoulder, r_elbow, l_hip, l_knee, r_hip, r_knee. The body faces world +z
// with +y up; its left side is at +x.
class ToyBodyModel final : public BodyModel {
public:
    enum PoseJoint { Spine, Neck, LShoulder, LElbow, RShoulder, RElbow, LHip, LKnee, RHip, RKnee, kPoseJoints };

    std::string name() const override { return "toy"; }
    int pose_dim() const override { return 3 * kPoseJoints; }
    int shape_dim() const override { return 2; }
    BodyParams default_params() const override;
    TexturedMesh build(const BodyParams& p) const override;
    std::vector<Vec3> joints(const BodyParams& p) const override;
    std::vector<double> shape_for(double height_m, double weight_kg) const override;
    double height_of(const std::vector<double>& shape) const override;
    double weight_of(const std::vector<double>& shape) const override;
    std::vector<JointLimit> joint_limits() const override;
    Vec3 head_forward(const BodyParams& p) const override;

    // Rest-pose (zero rotations, no global transform) positions for the same
    // topology, used by procedural shading that must follow the body.
    std::vector<Vec3> rest_vertices(const BodyParams& p) const;
};

std::shared_ptr<const BodyModel> make_toy_body_model();

// Frontal camera framing a default-height standing toy body.
Camera toy_camera(int width, int height);

struct Warning {
    std::string code;
    std::string message;
};

struct EditResult {
    BodyParams params;
    std::vector<Warning> warnings;
};

// Target pose as 2D keypoints (fitted by in-plane inverse kinematics through
// `camera`) or as a full joint-rotation vector.
using PoseTarget = std::variant<Keypoints, std::vector<double>>;

// Retargets pose and adjusts shape so the model's height/weight attributes
// match. Joint-limit violations are clamped with a warning per clamped angle.
// An edit to the same pose, height and weight returns `p` bit-identically.
EditResult edit_params(const BodyModel& model, const BodyParams& p, const PoseTarget& target_pose,
                       double height_m, double weight_kg, const Camera& camera);

// Projected keypoints of the posed skeleton.
Keypoints project_joints(const BodyModel& model, const BodyParams& p, const Camera& camera);

// Fits a toy body to a silhouette and 2D joints: inverse kinematics for pose
// and placement, then 1-D searches for height (silhouette extent) and weight
// (silhouette area).
BodyParams fit_toy_body(const BodyModel& model, const Mask& silhouette, const Keypoints& joints,
                        const Camera& camera);

}  // namespace diffbody::geometry
