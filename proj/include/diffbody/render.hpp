#pragma once

#include <functional>
#include <vector>

#include "diffbody/camera.hpp"
#include "diffbody/image.hpp"
#include "diffbody/mesh.hpp"

namespace diffbody::geometry {

inline constexpr double kDefaultBackground = 0.5;

// Per-pixel result of z-buffered rasterization: front-most triangle (or -1)
// and its perspective-correct barycentric weights at the pixel centre.
struct Fragments {
    int width = 0;
    int height = 0;
    std::vector<int> triangle;
    std::vector<std::array<double, 3>> barycentric;
    std::vector<double> depth;

    int at(int y, int x) const { return triangle[static_cast<std::size_t>(y) * width + x]; }
};

// Single-sample CPU rasterizer over each triangle's pixel bounding box.
// `camera` intrinsics are rescaled to width x height. Triangles with any
// vertex at or behind the camera plane are skipped. Depth ties keep the
// earlier triangle.
Fragments rasterize(const TexturedMesh& mesh, const Camera& camera, int width, int height);

struct RenderResult {
    Image image;
    LabelMap part_labels;
    Mask invisible_mask;

    Mask silhouette() const { return part_labels.foreground(); }
};

// Textures the mesh from `texture` through its uv. Background pixels carry
// kBackgroundLabel and `background` fill; pixels whose front-most triangle is
// labeled invisible are set in invisible_mask.
RenderResult render(const TexturedMesh& mesh, const Camera& camera, const Image& texture, int width, int height,
                    double background = kDefaultBackground);

// Same rasterization with a caller-supplied shader evaluated per covered pixel.
using Shader = std::function<std::array<double, 3>(int triangle, const std::array<double, 3>& barycentric)>;
RenderResult render_shaded(const TexturedMesh& mesh, const Camera& camera, const Shader& shader, int width,
                           int height, double background = kDefaultBackground);

}  // namespace diffbody::geometry
