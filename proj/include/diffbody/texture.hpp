#pragma once

#include "diffbody/camera.hpp"
#include "diffbody/image.hpp"
#include "diffbody/mesh.hpp"

namespace diffbody::geometry {

inline constexpr int kDefaultPadBand = 8;

// Horizontal reflection padding. On each scanline, a background pixel at
// distance d (1-based) outside a foreground run, with d <= band, takes the
// foreground value at inside offset d-1 (0-based) from that run's edge. When a
// pixel is within reach of two runs the nearer edge wins (left run on ties);
// mirror positions past the far end of a short run clamp to its last pixel.
Image reflect_pad(const Image& image, const Mask& fg_mask, int band = kDefaultPadBand);

// Projective texturing: each vertex receives uv = project_point / image size,
// where the image is `padded_ref` (the texture later sampled by render).
// Vertices that do not project are flagged invalid, and triangles using them
// are labeled invisible.
TexturedMesh project_texture(TexturedMesh mesh, const Camera& camera, const Image& padded_ref);

}  // namespace diffbody::geometry
