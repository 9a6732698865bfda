#include "diffbody/render.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "diffbody/error.hpp"

namespace diffbody::geometry {
namespace {

Camera rescaled(const Camera& cam, int width, int height) {
    Camera c = cam;
    const double sx = static_cast<double>(width) / cam.width;
    const double sy = static_cast<double>(height) / cam.height;
    c.fx *= sx;
    c.cx *= sx;
    c.fy *= sy;
    c.cy *= sy;
    c.width = width;
    c.height = height;
    return c;
}

double edge(double ax, double ay, double bx, double by, double px, double py) {
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
}

std::array<double, 3> sample_bilinear(const Image& tex, double u, double v) {
    const double fx = std::clamp(u * tex.width() - 0.5, 0.0, tex.width() - 1.0);
    const double fy = std::clamp(v * tex.height() - 0.5, 0.0, tex.height() - 1.0);
    const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
    const int x1 = std::min(x0 + 1, tex.width() - 1), y1 = std::min(y0 + 1, tex.height() - 1);
    const double wx = fx - x0, wy = fy - y0;
    std::array<double, 3> out{};
    for (int c = 0; c < 3; ++c) {
        const int cc = tex.channels() == 1 ? 0 : c;
        out[c] = (1 - wy) * ((1 - wx) * tex.at(y0, x0, cc) + wx * tex.at(y0, x1, cc)) +
                 wy * ((1 - wx) * tex.at(y1, x0, cc) + wx * tex.at(y1, x1, cc));
    }
    return out;
}

RenderResult shade(const TexturedMesh& mesh, const Fragments& f, const Shader& shader, double background) {
    RenderResult r{Image(f.height, f.width, 3, background), LabelMap(f.height, f.width), Mask(f.height, f.width)};
    const bool have_vis = mesh.has_visibility();
    for (int y = 0; y < f.height; ++y)
        for (int x = 0; x < f.width; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * f.width + x;
            const int t = f.triangle[i];
            if (t < 0) continue;
            const auto rgb = shader(t, f.barycentric[i]);
            for (int c = 0; c < 3; ++c) r.image.at(y, x, c) = std::clamp(rgb[c], 0.0, 1.0);
            r.part_labels.at(y, x) = mesh.part_labels[t];
            if (have_vis && mesh.visibility[t] == Visibility::Invisible) r.invisible_mask.at(y, x) = 1;
        }
    return r;
}

}  // namespace

Fragments rasterize(const TexturedMesh& mesh, const Camera& camera, int width, int height) {
    if (width <= 0 || height <= 0) throw InvalidArgument("render size must be positive");
    const Camera cam = rescaled(camera, width, height);
    Fragments f;
    f.width = width;
    f.height = height;
    const std::size_t npx = static_cast<std::size_t>(width) * height;
    f.triangle.assign(npx, -1);
    f.barycentric.assign(npx, {0, 0, 0});
    f.depth.assign(npx, std::numeric_limits<double>::infinity());

    std::vector<Vec3> screen(mesh.vertices.size());  // (u, v, camera z); z <= 0 marks unprojectable
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
        const Vec3 c = cam.to_camera(mesh.vertices[i]);
        if (c.z > 0.0)
            screen[i] = {cam.fx * c.x / c.z + cam.cx, cam.fy * c.y / c.z + cam.cy, c.z};
        else
            screen[i] = {0, 0, -1};
    }
    for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
        const auto& tri = mesh.triangles[t];
        const Vec3 &p0 = screen[tri[0]], &p1 = screen[tri[1]], &p2 = screen[tri[2]];
        if (p0.z <= 0 || p1.z <= 0 || p2.z <= 0) continue;
        const double area = edge(p0.x, p0.y, p1.x, p1.y, p2.x, p2.y);
        if (area == 0.0 || !std::isfinite(area)) continue;
        const int xmin = std::max(0, static_cast<int>(std::floor(std::min({p0.x, p1.x, p2.x}))));
        const int xmax = std::min(width - 1, static_cast<int>(std::ceil(std::max({p0.x, p1.x, p2.x}))));
        const int ymin = std::max(0, static_cast<int>(std::floor(std::min({p0.y, p1.y, p2.y}))));
        const int ymax = std::min(height - 1, static_cast<int>(std::ceil(std::max({p0.y, p1.y, p2.y}))));
        for (int y = ymin; y <= ymax; ++y) {
            const double py = y + 0.5;
            for (int x = xmin; x <= xmax; ++x) {
                const double px = x + 0.5;
                const double w0 = edge(p1.x, p1.y, p2.x, p2.y, px, py) / area;
                const double w1 = edge(p2.x, p2.y, p0.x, p0.y, px, py) / area;
                const double w2 = edge(p0.x, p0.y, p1.x, p1.y, px, py) / area;
                if (w0 < 0 || w1 < 0 || w2 < 0) continue;
                // Screen-space weights -> perspective-correct weights via 1/z.
                const double q0 = w0 / p0.z, q1 = w1 / p1.z, q2 = w2 / p2.z;
                const double inv_z = q0 + q1 + q2;
                const double z = 1.0 / inv_z;
                const std::size_t i = static_cast<std::size_t>(y) * width + x;
                if (!(z < f.depth[i])) continue;
                f.depth[i] = z;
                f.triangle[i] = static_cast<int>(t);
                f.barycentric[i] = {q0 * z, q1 * z, q2 * z};
            }
        }
    }
    return f;
}

RenderResult render(const TexturedMesh& mesh, const Camera& camera, const Image& texture, int width, int height,
                    double background) {
    if (!mesh.has_uv()) throw GeometryError("render needs a mesh with uv coordinates");
    const bool have_valid = mesh.uv_valid.size() == mesh.uv.size();
    const Fragments f = rasterize(mesh, camera, width, height);
    return shade(
        mesh, f,
        [&](int t, const std::array<double, 3>& w) -> std::array<double, 3> {
            const auto& tri = mesh.triangles[t];
            for (int v : tri)
                if (have_valid && !mesh.uv_valid[v]) return {background, background, background};
            double u = 0, v = 0;
            for (int k = 0; k < 3; ++k) {
                u += w[k] * mesh.uv[tri[k]].x;
                v += w[k] * mesh.uv[tri[k]].y;
            }
            return sample_bilinear(texture, u, v);
        },
        background);
}

RenderResult render_shaded(const TexturedMesh& mesh, const Camera& camera, const Shader& shader, int width, int height,
                           double background) {
    return shade(mesh, rasterize(mesh, camera, width, height), shader, background);
}

}  // namespace diffbody::geometry
