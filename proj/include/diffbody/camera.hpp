#pragma once

#include <optional>

#include "diffbody/image.hpp"
#include "diffbody/vec.hpp"

namespace diffbody {

// Pinhole camera. World points map to camera space as Xc = R * Xw + t, with
// camera axes x right, y down, z forward (right-handed). Pixel (u, v) has its
// origin at the top-left corner of the top-left pixel, so pixel centres sit at
// half-integers.
struct Camera {
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;
    Mat3 rotation = Mat3::identity();
    Vec3 translation{};
    int width = 1;
    int height = 1;

    Vec3 to_camera(const Vec3& world) const { return rotation * world + translation; }
    // World-space position of the optical centre.
    Vec3 center() const;

    // Camera at `distance` in front of the look-at point along world +z, with
    // world +y mapped to image up.
    static Camera looking_down_negative_z(int width, int height, double focal_px, const Vec3& target,
                                          double distance);

    bool operator==(const Camera&) const = default;
};

// Perspective projection. Returns nullopt for points at the optical centre or
// behind the image plane (camera-space z <= 0): those are non-projectable.
std::optional<Vec2> project_point(const Camera& camera, const Vec3& p);

}  // namespace diffbody
