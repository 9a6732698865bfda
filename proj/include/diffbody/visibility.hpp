#pragma once

#include <optional>

#include "diffbody/camera.hpp"
#include "diffbody/mesh.hpp"

namespace diffbody::geometry {

// Ray-cast visibility from the camera centre to each triangle centroid. A
// triangle is invisible when it is degenerate, back-facing, behind the
// camera, textured from an invalid uv, or when another triangle intersects the
// ray closer than (centroid distance - eps_occ). eps_occ defaults to
// 1e-6 x the mesh bounding-box diagonal.
TexturedMesh label_visibility(TexturedMesh mesh, const Camera& camera,
                              std::optional<double> eps_occ = std::nullopt);

double default_occlusion_epsilon(const TexturedMesh& mesh);

}  // namespace diffbody::geometry
