#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "diffbody/image.hpp"
#include "diffbody/vec.hpp"

namespace diffbody::geometry {

// Fixed body-part label set. Background is reserved for uncovered pixels.
enum class BodyPart : int {
    Background = kBackgroundLabel,
    Torso,
    Head,
    Face,
    LeftUpperArm,
    LeftForearm,
    RightUpperArm,
    RightForearm,
    LeftThigh,
    LeftShin,
    RightThigh,
    RightShin,
};
inline constexpr int kPartLabelCount = 12;

inline constexpr int label_of(BodyPart p) { return static_cast<int>(p); }
bool is_body_part_label(int label);
const char* part_name(int label);

enum class Visibility : std::uint8_t { Unknown = 0, Visible = 1, Invisible = 2 };

struct TexturedMesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 3>> triangles;
    std::vector<int> part_labels;  // one per triangle
    // Filled by project_texture; uv in [0,1]^2 with top-left origin.
    std::vector<Vec2> uv;
    std::vector<std::uint8_t> uv_valid;
    // Filled by label_visibility.
    std::vector<Visibility> visibility;

    std::size_t triangle_count() const { return triangles.size(); }
    bool has_uv() const { return uv.size() == vertices.size(); }
    bool has_visibility() const { return visibility.size() == triangles.size(); }

    // Throws GeometryError on out-of-range indices or unknown labels.
    void validate() const;
    bool operator==(const TexturedMesh&) const = default;
};

// Copies uv and visibility computed on `source` onto a mesh of identical
// topology (e.g. the same body after a pose/shape edit).
TexturedMesh transfer_surface_attributes(TexturedMesh target, const TexturedMesh& source);

// Axis-aligned bounds of the vertex set.
struct Aabb {
    Vec3 min;
    Vec3 max;
    Vec3 extent() const { return max - min; }
    double diameter() const { return norm(extent()); }
};
Aabb bounds(const TexturedMesh& mesh);

// Closed unit-radius icosphere with outward winding; subdivisions=1 gives 80 faces.
TexturedMesh make_icosphere(int subdivisions, const Vec3& center = {}, double radius = 1.0,
                            int label = label_of(BodyPart::Torso));

}  // namespace diffbody::geometry
