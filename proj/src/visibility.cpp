#include "diffbody/visibility.hpp"

#include <algorithm>
#include <numeric>

namespace diffbody::geometry {
namespace {

struct Box3 {
    Vec3 lo{1e300, 1e300, 1e300};
    Vec3 hi{-1e300, -1e300, -1e300};
    void grow(const Vec3& p) {
        lo = {std::min(lo.x, p.x), std::min(lo.y, p.y), std::min(lo.z, p.z)};
        hi = {std::max(hi.x, p.x), std::max(hi.y, p.y), std::max(hi.z, p.z)};
    }
    void grow(const Box3& b) {
        grow(b.lo);
        grow(b.hi);
    }
};

struct Node {
    Box3 box;
    int left = -1;   // child index, or -1 for a leaf
    int right = -1;
    int first = 0;   // leaf range in `order`
    int count = 0;
};

// Median-split bounding volume hierarchy over triangles.
class Bvh {
public:
    Bvh(const TexturedMesh& mesh, double pad) : mesh_(mesh) {
        const std::size_t n = mesh.triangles.size();
        order_.resize(n);
        std::iota(order_.begin(), order_.end(), 0);
        boxes_.resize(n);
        centroids_.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            for (int v : mesh.triangles[i]) boxes_[i].grow(mesh.vertices[v]);
            boxes_[i].lo = boxes_[i].lo - Vec3{pad, pad, pad};
            boxes_[i].hi = boxes_[i].hi + Vec3{pad, pad, pad};
            centroids_[i] = (boxes_[i].lo + boxes_[i].hi) * 0.5;
        }
        if (n > 0) build(0, static_cast<int>(n));
    }

    // True if any triangle other than `skip` hits origin + s*dir for s in (s_min, s_max).
    template <typename Hit>
    bool any_hit(const Vec3& origin, const Vec3& dir, double s_min, double s_max, int skip, Hit&& hit) const {
        if (nodes_.empty()) return false;
        const Vec3 inv{1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z};
        int stack[128];
        int top = 0;
        stack[top++] = 0;
        while (top > 0) {
            const Node& node = nodes_[stack[--top]];
            if (!slab(node.box, origin, inv, s_min, s_max)) continue;
            if (node.left < 0) {
                for (int k = node.first; k < node.first + node.count; ++k) {
                    const int t = order_[k];
                    if (t != skip && hit(t)) return true;
                }
            } else {
                stack[top++] = node.left;
                stack[top++] = node.right;
            }
        }
        return false;
    }

private:
    int build(int first, int count) {
        const int id = static_cast<int>(nodes_.size());
        nodes_.push_back({});
        Box3 box, cbox;
        for (int k = first; k < first + count; ++k) {
            box.grow(boxes_[order_[k]]);
            cbox.grow(centroids_[order_[k]]);
        }
        nodes_[id].box = box;
        if (count <= 4) {
            nodes_[id].first = first;
            nodes_[id].count = count;
            return id;
        }
        const Vec3 ext = cbox.hi - cbox.lo;
        const int axis = ext.x >= ext.y && ext.x >= ext.z ? 0 : (ext.y >= ext.z ? 1 : 2);
        const int mid = first + count / 2;
        std::nth_element(order_.begin() + first, order_.begin() + mid, order_.begin() + first + count,
                         [&](int a, int b) { return centroids_[a][axis] < centroids_[b][axis]; });
        const int l = build(first, mid - first);
        const int r = build(mid, first + count - mid);
        nodes_[id].left = l;
        nodes_[id].right = r;
        return id;
    }

    static bool slab(const Box3& b, const Vec3& o, const Vec3& inv, double s_min, double s_max) {
        double t0 = s_min, t1 = s_max;
        for (int a = 0; a < 3; ++a) {
            double tn = (b.lo[a] - o[a]) * inv[a];
            double tf = (b.hi[a] - o[a]) * inv[a];
            if (tn > tf) std::swap(tn, tf);
            // NaN (0 * inf) means the ray lies on a slab plane; keep the node.
            if (tn == tn) t0 = std::max(t0, tn);
            if (tf == tf) t1 = std::min(t1, tf);
            if (t0 > t1) return false;
        }
        return true;
    }

    const TexturedMesh& mesh_;
    std::vector<int> order_;
    std::vector<Box3> boxes_;
    std::vector<Vec3> centroids_;
    std::vector<Node> nodes_;
};

// Moller-Trumbore. Returns the ray parameter (in units of |dir|) or a negative value.
double intersect(const Vec3& o, const Vec3& dir, const Vec3& a, const Vec3& b, const Vec3& c) {
    const Vec3 e1 = b - a, e2 = c - a;
    const Vec3 pv = cross(dir, e2);
    const double det = dot(e1, pv);
    if (det == 0.0) return -1.0;
    const double inv = 1.0 / det;
    const Vec3 tv = o - a;
    const double u = dot(tv, pv) * inv;
    if (u < 0.0 || u > 1.0) return -1.0;
    const Vec3 qv = cross(tv, e1);
    const double v = dot(dir, qv) * inv;
    if (v < 0.0 || u + v > 1.0) return -1.0;
    return dot(e2, qv) * inv;
}

}  // namespace

double default_occlusion_epsilon(const TexturedMesh& mesh) {
    return mesh.vertices.empty() ? 0.0 : 1e-6 * bounds(mesh).diameter();
}

TexturedMesh label_visibility(TexturedMesh mesh, const Camera& camera, std::optional<double> eps_occ) {
    const double eps = eps_occ.value_or(default_occlusion_epsilon(mesh));
    const Vec3 eye = camera.center();
    const std::size_t n = mesh.triangles.size();
    const bool have_uv = mesh.uv_valid.size() == mesh.vertices.size();
    const double diam = mesh.vertices.empty() ? 0.0 : bounds(mesh).diameter();
    const Bvh bvh(mesh, eps + 1e-12 * diam);

    std::vector<Visibility> vis(n, Visibility::Visible);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& tri = mesh.triangles[i];
        const Vec3& a = mesh.vertices[tri[0]];
        const Vec3& b = mesh.vertices[tri[1]];
        const Vec3& c = mesh.vertices[tri[2]];
        const Vec3 normal = cross(b - a, c - a);
        const Vec3 centroid = (a + b + c) / 3.0;
        const Vec3 dir = centroid - eye;
        const double dist = norm(dir);
        bool invisible = norm(normal) == 0.0 || dot(normal, dir) >= 0.0 || camera.to_camera(centroid).z <= 0.0 ||
                         dist <= eps;
        if (have_uv && !invisible)
            for (int v : tri)
                if (!mesh.uv_valid[v]) invisible = true;
        if (!invisible) {
            // Hits strictly before the centroid by more than eps occlude it.
            const double s_max = 1.0 - eps / dist;
            invisible = bvh.any_hit(eye, dir, 0.0, s_max, static_cast<int>(i), [&](int j) {
                const auto& t = mesh.triangles[j];
                const double s = intersect(eye, dir, mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]);
                return s > 0.0 && s < s_max;
            });
        }
        vis[i] = invisible ? Visibility::Invisible : Visibility::Visible;
    }
    mesh.visibility = std::move(vis);
    return mesh;
}

}  // namespace diffbody::geometry
