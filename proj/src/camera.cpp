#include "diffbody/camera.hpp"

namespace diffbody {

Mat3 rotation_x(double a) {
    const double c = std::cos(a), s = std::sin(a);
    Mat3 r;
    r.m = {1, 0, 0, 0, c, -s, 0, s, c};
    return r;
}

Mat3 rotation_y(double a) {
    const double c = std::cos(a), s = std::sin(a);
    Mat3 r;
    r.m = {c, 0, s, 0, 1, 0, -s, 0, c};
    return r;
}

Mat3 rotation_z(double a) {
    const double c = std::cos(a), s = std::sin(a);
    Mat3 r;
    r.m = {c, -s, 0, s, c, 0, 0, 0, 1};
    return r;
}

Mat3 rotation_euler_xyz(const Vec3& angles) {
    return rotation_x(angles.x) * rotation_y(angles.y) * rotation_z(angles.z);
}

Vec3 Camera::center() const {
    // Xc = R Xw + t = 0  =>  Xw = -R^T t
    return -(rotation.transposed() * translation);
}

Camera Camera::looking_down_negative_z(int width, int height, double focal_px, const Vec3& target,
                                       double distance) {
    Camera cam;
    cam.width = width;
    cam.height = height;
    cam.fx = focal_px;
    cam.fy = focal_px;
    cam.cx = width / 2.0;
    cam.cy = height / 2.0;
    // world x -> camera x, world y -> camera -y, world z -> camera -z
    cam.rotation.m = {1, 0, 0, 0, -1, 0, 0, 0, -1};
    const Vec3 eye = target + Vec3{0.0, 0.0, distance};
    cam.translation = -(cam.rotation * eye);
    return cam;
}

std::optional<Vec2> project_point(const Camera& camera, const Vec3& p) {
    const Vec3 c = camera.to_camera(p);
    if (!(c.z > 0.0) || !finite(c)) return std::nullopt;
    return Vec2{camera.fx * c.x / c.z + camera.cx, camera.fy * c.y / c.z + camera.cy};
}

}  // namespace diffbody
