#include "diffbody/texture.hpp"

#include <algorithm>
#include <limits>

#include "diffbody/error.hpp"

namespace diffbody::geometry {

Image reflect_pad(const Image& image, const Mask& fg_mask, int band) {
    if (band < 0) throw InvalidArgument("reflect_pad band must be non-negative");
    if (fg_mask.height() != image.height() || fg_mask.width() != image.width())
        throw InvalidArgument("reflect_pad mask shape mismatch");
    Image out = image;
    if (band == 0) return out;
    const int W = image.width();
    const int C = image.channels();
    struct Run {
        int begin;
        int end;  // inclusive
    };
    std::vector<Run> runs;
    for (int y = 0; y < image.height(); ++y) {
        runs.clear();
        for (int x = 0; x < W;) {
            if (!fg_mask.at(y, x)) {
                ++x;
                continue;
            }
            int e = x;
            while (e + 1 < W && fg_mask.at(y, e + 1)) ++e;
            runs.push_back({x, e});
            x = e + 1;
        }
        if (runs.empty()) continue;
        std::size_t next = 0;  // first run starting after x
        for (int x = 0; x < W; ++x) {
            while (next < runs.size() && runs[next].begin <= x) ++next;
            if (fg_mask.at(y, x)) continue;
            constexpr int far = std::numeric_limits<int>::max();
            int d_left = far, d_right = far;
            int src_left = -1, src_right = -1;
            if (next > 0) {
                const Run& r = runs[next - 1];
                d_left = x - r.end;
                src_left = std::max(r.begin, r.end - (d_left - 1));
            }
            if (next < runs.size()) {
                const Run& r = runs[next];
                d_right = r.begin - x;
                src_right = std::min(r.end, r.begin + (d_right - 1));
            }
            const bool use_left = d_left <= d_right;
            const int d = use_left ? d_left : d_right;
            if (d > band) continue;
            const int src = use_left ? src_left : src_right;
            for (int c = 0; c < C; ++c) out.at(y, x, c) = image.at(y, src, c);
        }
    }
    return out;
}

TexturedMesh project_texture(TexturedMesh mesh, const Camera& camera, const Image& padded_ref) {
    if (padded_ref.empty()) throw GeometryError("projective texturing needs a texture image");
    mesh.uv.assign(mesh.vertices.size(), Vec2{});
    mesh.uv_valid.assign(mesh.vertices.size(), 0);
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
        if (const auto p = project_point(camera, mesh.vertices[i])) {
            mesh.uv[i] = {p->x / camera.width, p->y / camera.height};
            mesh.uv_valid[i] = 1;
        }
    }
    if (mesh.visibility.size() != mesh.triangles.size()) mesh.visibility.assign(mesh.triangles.size(), Visibility::Unknown);
    for (std::size_t t = 0; t < mesh.triangles.size(); ++t)
        for (int v : mesh.triangles[t])
            if (!mesh.uv_valid[v]) mesh.visibility[t] = Visibility::Invisible;
    return mesh;
}

}  // namespace diffbody::geometry
