#include "diffbody/mesh.hpp"

#include <algorithm>
#include <limits>
#include <map>

#include "diffbody/error.hpp"

namespace diffbody::geometry {

bool is_body_part_label(int label) { return label > kBackgroundLabel && label < kPartLabelCount; }

const char* part_name(int label) {
    static constexpr const char* names[kPartLabelCount] = {
        "background", "torso",       "head",         "face",       "left_upper_arm", "left_forearm",
        "right_upper_arm", "right_forearm", "left_thigh", "left_shin", "right_thigh", "right_shin"};
    return label >= 0 && label < kPartLabelCount ? names[label] : "unknown";
}

void TexturedMesh::validate() const {
    const int n = static_cast<int>(vertices.size());
    for (const auto& t : triangles)
        for (int i : t)
            if (i < 0 || i >= n) throw GeometryError("triangle index out of range");
    if (part_labels.size() != triangles.size()) throw GeometryError("part_labels must have one entry per triangle");
    for (int l : part_labels)
        if (!is_body_part_label(l)) throw GeometryError("unknown part label " + std::to_string(l));
    if (!uv.empty() && uv.size() != vertices.size()) throw GeometryError("uv must have one entry per vertex");
    if (uv_valid.size() != uv.size()) throw GeometryError("uv_valid must match uv");
    if (!visibility.empty() && visibility.size() != triangles.size())
        throw GeometryError("visibility must have one entry per triangle");
}

TexturedMesh transfer_surface_attributes(TexturedMesh target, const TexturedMesh& source) {
    if (target.vertices.size() != source.vertices.size() || target.triangles != source.triangles)
        throw GeometryError("surface attributes need identical topology");
    target.uv = source.uv;
    target.uv_valid = source.uv_valid;
    target.visibility = source.visibility;
    return target;
}

Aabb bounds(const TexturedMesh& mesh) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    Aabb b{{inf, inf, inf}, {-inf, -inf, -inf}};
    for (const auto& v : mesh.vertices) {
        b.min = {std::min(b.min.x, v.x), std::min(b.min.y, v.y), std::min(b.min.z, v.z)};
        b.max = {std::max(b.max.x, v.x), std::max(b.max.y, v.y), std::max(b.max.z, v.z)};
    }
    return b;
}

TexturedMesh make_icosphere(int subdivisions, const Vec3& center, double radius, int label) {
    const double t = (1.0 + std::sqrt(5.0)) / 2.0;
    std::vector<Vec3> v = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                           {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
    for (auto& p : v) p = normalized(p);
    std::vector<std::array<int, 3>> f = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                                         {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                                         {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                                         {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
    for (int s = 0; s < subdivisions; ++s) {
        std::map<std::pair<int, int>, int> mid;
        auto midpoint = [&](int a, int b) {
            const auto key = std::minmax(a, b);
            if (auto it = mid.find(key); it != mid.end()) return it->second;
            v.push_back(normalized((v[a] + v[b]) * 0.5));
            return mid[key] = static_cast<int>(v.size()) - 1;
        };
        std::vector<std::array<int, 3>> next;
        for (const auto& tri : f) {
            const int a = midpoint(tri[0], tri[1]), b = midpoint(tri[1], tri[2]), c = midpoint(tri[2], tri[0]);
            next.push_back({tri[0], a, c});
            next.push_back({tri[1], b, a});
            next.push_back({tri[2], c, b});
            next.push_back({a, b, c});
        }
        f = std::move(next);
    }
    TexturedMesh m;
    for (const auto& p : v) m.vertices.push_back(center + p * radius);
    m.triangles = std::move(f);
    m.part_labels.assign(m.triangles.size(), label);
    return m;
}

}  // namespace diffbody::geometry
