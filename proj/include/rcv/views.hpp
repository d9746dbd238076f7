#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "rcv/error.hpp"
#include "rcv/geometry.hpp"
#include "rcv/image.hpp"

namespace rcv {

/// Coordinate system of one recursion step, expressed in its parent frame.
struct StepFrame {
    AxesTriad axes;
    Vec3 origin = Vec3::Zero();

    Vec3 to_local(const Vec3& p) const { return axes.matrix().transpose() * (p - origin); }
    Vec3 to_parent(const Vec3& local) const { return axes.matrix() * local + origin; }

    /// Local -> parent transform (one factor of the chain).
    RigidTransform transform() const { return {axes.matrix(), origin}; }
};

enum class ViewKind { front, side };

inline const char* to_string(ViewKind kind) { return kind == ViewKind::front ? "front" : "side"; }

struct Pixel {
    int u = 0;
    int v = 0;
    friend bool operator==(const Pixel&, const Pixel&) = default;
};

struct RenderConfig {
    int max_side = 640;
    int margin = 8;
    int splat_radius = 1;
};

/// Orthographic raster of a point subset. Pixel (u, v) is the rounded image of
/// the in-plane local coordinates (h, y): u = round(h * scale + offset_u),
/// v = round(y * scale + offset_v), where h is the local x (front) or z (side).
struct PseudoView {
    ViewKind kind = ViewKind::front;
    RgbImage image;
    double scale = 1.0;
    double offset_u = 0.0;
    double offset_v = 0.0;
    StepFrame frame;
    std::vector<std::size_t> indices;      // points rendered, in render order
    std::vector<Pixel> point_pixels;       // aligned with `indices`
    std::vector<std::int32_t> winners;     // per pixel: position in `indices`, -1 = background

    double u_to_local(double u) const { return (u - offset_u) / scale; }
    double v_to_local(double v) const { return (v - offset_v) / scale; }
};

/// In-plane horizontal coordinate, vertical coordinate and depth of a local point.
inline Eigen::Vector3d view_coordinates(const Vec3& local, ViewKind kind) {
    if (kind == ViewKind::front) return {local.x(), local.y(), local.z()};
    return {local.z(), local.y(), local.x()};
}

inline std::vector<std::size_t> extract_frustum(const PointCloud& cloud, const CameraIntrinsics& intr,
                                                const Detection2D& seed) {
    if (cloud.empty()) fail(ErrorKind::InvalidArgument, "empty cloud");
    const PixelRect rect = seed.rect;
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const Vec3& p = cloud.positions[i];
        if (!(p.z() > 0.0)) continue;
        const Eigen::Vector2d uv = intr.project(p);
        if (rect.contains(uv.x(), uv.y())) out.push_back(i);
    }
    if (out.empty()) fail(ErrorKind::EmptyFrustum, "seed rectangle covers no points");
    return out;
}

inline Vec3 centroid(const PointCloud& cloud, std::span<const std::size_t> indices) {
    Vec3 sum = Vec3::Zero();
    for (auto i : indices) sum += cloud.positions[i];
    return indices.empty() ? sum : Vec3(sum / static_cast<double>(indices.size()));
}

/// Axis-aligned bounds of the points in `frame`'s axes; degenerate sides clamp to 1 mm.
inline OrientedBox3D coarse_box(const PointCloud& cloud, std::span<const std::size_t> indices, const StepFrame& frame) {
    if (indices.empty()) fail(ErrorKind::InvalidArgument, "coarse_box needs at least one point");
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 hi = -lo;
    for (auto i : indices) {
        const Vec3 local = frame.to_local(cloud.positions[i]);
        lo = lo.cwiseMin(local);
        hi = hi.cwiseMax(local);
    }
    OrientedBox3D box;
    const Vec3 mid = 0.5 * (lo + hi);
    box.extent = (hi - lo).cwiseMax(1e-3);
    box.pose = RigidTransform(frame.axes.matrix(), frame.to_parent(mid));
    return box;
}

inline std::int64_t round_half_up(double x) { return static_cast<std::int64_t>(std::floor(x + 0.5)); }

inline PseudoView render_pseudo_view(const PointCloud& cloud, std::span<const std::size_t> indices,
                                     const StepFrame& frame, ViewKind kind, const RenderConfig& cfg = {}) {
    if (indices.empty()) fail(ErrorKind::InvalidArgument, "render needs at least one point");
    if (cfg.max_side <= 2 * cfg.margin + 1) fail(ErrorKind::InvalidArgument, "max_side too small for margin");

    std::vector<Eigen::Vector3d> coords;
    coords.reserve(indices.size());
    double hmin = std::numeric_limits<double>::infinity(), hmax = -hmin;
    double ymin = hmin, ymax = -hmin;
    for (auto i : indices) {
        const Eigen::Vector3d c = view_coordinates(frame.to_local(cloud.positions[i]), kind);
        hmin = std::min(hmin, c.x());
        hmax = std::max(hmax, c.x());
        ymin = std::min(ymin, c.y());
        ymax = std::max(ymax, c.y());
        coords.push_back(c);
    }
    const double extent_h = hmax - hmin;
    const double extent_v = ymax - ymin;
    if (extent_h < 1e-6 || extent_v < 1e-6) fail(ErrorKind::DegenerateExtent, "in-plane extent below 1e-6 m");

    PseudoView view;
    view.kind = kind;
    view.frame = frame;
    view.indices.assign(indices.begin(), indices.end());
    const int usable = cfg.max_side - 2 * cfg.margin - 1;
    view.scale = usable / std::max(extent_h, extent_v);
    view.offset_u = cfg.margin - hmin * view.scale;
    view.offset_v = cfg.margin - ymin * view.scale;
    const int width = static_cast<int>(std::ceil(extent_h * view.scale)) + 2 * cfg.margin + 1;
    const int height = static_cast<int>(std::ceil(extent_v * view.scale)) + 2 * cfg.margin + 1;
    view.image = RgbImage(width, height);
    view.winners.assign(static_cast<std::size_t>(width) * height, -1);

    std::vector<double> depth(view.winners.size(), std::numeric_limits<double>::infinity());
    const int r = std::max(cfg.splat_radius, 0);
    view.point_pixels.reserve(coords.size());
    for (std::size_t k = 0; k < coords.size(); ++k) {
        const auto& c = coords[k];
        const int u = static_cast<int>(std::clamp<std::int64_t>(round_half_up(c.x() * view.scale + view.offset_u), 0, width - 1));
        const int v = static_cast<int>(std::clamp<std::int64_t>(round_half_up(c.y() * view.scale + view.offset_v), 0, height - 1));
        view.point_pixels.push_back({u, v});
        for (int dv = -r; dv <= r; ++dv) {
            for (int du = -r; du <= r; ++du) {
                if (du * du + dv * dv > r * r) continue;
                const int pu = u + du;
                const int pv = v + dv;
                if (pu < 0 || pv < 0 || pu >= width || pv >= height) continue;
                const auto px = static_cast<std::size_t>(pv) * width + pu;
                if (c.z() < depth[px]) {
                    depth[px] = c.z();
                    view.winners[px] = static_cast<std::int32_t>(k);
                }
            }
        }
    }
    for (int v = 0; v < height; ++v) {
        for (int u = 0; u < width; ++u) {
            const auto w = view.winners[static_cast<std::size_t>(v) * width + u];
            if (w >= 0) view.image.set(u, v, cloud.colors[view.indices[static_cast<std::size_t>(w)]]);
        }
    }
    return view;
}

/// Instance-id raster of a rendered view, taken from the z-buffer winners.
inline InstancePixelMap render_instance_map(const PseudoView& view, const PointCloud& cloud,
                                            const std::map<std::uint32_t, std::string>& classes) {
    InstancePixelMap map(view.image.width, view.image.height);
    map.classes = classes;
    if (!cloud.instance_ids) return map;
    for (std::size_t px = 0; px < view.winners.size(); ++px) {
        const auto w = view.winners[px];
        if (w >= 0) map.ids[px] = (*cloud.instance_ids)[view.indices[static_cast<std::size_t>(w)]];
    }
    return map;
}

inline std::vector<std::size_t> prune_by_boxes(std::span<const std::size_t> indices, const PseudoView& front,
                                               const PseudoView& side, const Detection2D& det_front,
                                               const Detection2D& det_side) {
    if (front.indices.size() != indices.size() || side.indices.size() != indices.size() ||
        !std::equal(indices.begin(), indices.end(), front.indices.begin()) ||
        !std::equal(indices.begin(), indices.end(), side.indices.begin())) {
        fail(ErrorKind::InvalidArgument, "views were not rendered over the given index set");
    }
    const PixelRect rf = det_front.rect.snapped();
    const PixelRect rs = det_side.rect.snapped();
    std::vector<std::size_t> kept;
    for (std::size_t k = 0; k < indices.size(); ++k) {
        const Pixel pf = front.point_pixels[k];
        const Pixel ps = side.point_pixels[k];
        if (rf.contains(pf.u, pf.v) && rs.contains(ps.u, ps.v)) kept.push_back(indices[k]);
    }
    if (kept.empty()) fail(ErrorKind::EmptyAfterPrune, "no point lies inside both detections");
    return kept;
}

}  // namespace rcv
