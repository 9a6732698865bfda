#pragma once

#include "diffbody/image.hpp"
#include "diffbody/regions.hpp"

namespace diffbody::compositor {

struct BlendProblem {
    Image source;       // placed in destination coordinates
    Image destination;
    Mask region;        // pixels to replace
};

// Interiors up to this many unknowns are solved densely, larger ones by CG.
inline constexpr std::size_t kDenseLimit = 256;

struct SolverStats {
    std::size_t unknowns = 0;
    int iterations = 0;  // 0 for the dense path
    bool dense = false;
};

// Solves the masked Poisson equation per channel: inside the region the
// 5-point Laplacian of the result matches the source's, with destination
// values as the Dirichlet boundary. Outside the region the destination is
// copied unchanged. No clamping. Throws GeometryError if the region touches
// the image border and InvalidArgument on shape mismatch.
Raster poisson_solve(const BlendProblem& p, SolverStats* stats = nullptr);

// poisson_solve clamped to [0, 1]; pixels outside the region are bitwise the
// destination.
Image poisson_blend(const BlendProblem& p, SolverStats* stats = nullptr);

// Resizes the refined face crop back to its placement box and blends it into
// `body` over `interior` (crop-sized mask). Throws GeometryError if the
// placement does not fit the body image or the face size.
Image paste_face(const Image& body, const Image& face, const geometry::Placement& placement, const Mask& interior);

}  // namespace diffbody::compositor
