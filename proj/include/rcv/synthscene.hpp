#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "rcv/detect.hpp"
#include "rcv/error.hpp"
#include "rcv/geometry.hpp"
#include "rcv/image.hpp"
#include "rcv/recursion.hpp"

namespace rcv {

struct ClassSpec {
    std::string name;
    Vec3 size_min;
    Vec3 size_max;
};

enum class OrientationMode { upright, full_so3 };

inline std::vector<ClassSpec> default_classes() {
    return {
        {"chair", {0.45, 0.7, 0.45}, {0.65, 1.0, 0.65}},
        {"table", {0.9, 0.6, 0.6}, {1.6, 0.8, 1.0}},
        {"cabinet", {0.5, 0.8, 0.4}, {1.0, 1.6, 0.6}},
    };
}

/// Camera at the origin looking along +z with y pointing down; the ground is
/// the plane y = camera_height.
struct SceneSpec {
    std::uint64_t seed = 0;
    int min_objects = 1;
    int max_objects = 3;
    std::vector<ClassSpec> classes = default_classes();
    OrientationMode orientation = OrientationMode::upright;
    bool partial_view = true;
    double clutter_density = 20.0;  // points per m^2 of ground
    double occluder_prob = 0.0;
    CameraIntrinsics intrinsics;
    double points_per_m2 = 2500.0;
    double camera_height = 1.2;
    double min_depth = 2.5;
    double max_depth = 6.0;
    /// Reject placements whose image footprints overlap.
    bool avoid_occlusion = false;
    int image_splat_radius = 1;

    void validate() const {
        intrinsics.validate();
        if (min_objects < 0 || max_objects < min_objects) fail(ErrorKind::InvalidArgument, "invalid object count range");
        if (max_objects > 0 && classes.empty()) fail(ErrorKind::InvalidArgument, "no object classes");
        for (const auto& c : classes) {
            if ((c.size_min.array() <= 0.0).any() || (c.size_max.array() < c.size_min.array()).any()) {
                fail(ErrorKind::InvalidArgument, "invalid size range for class " + c.name);
            }
        }
        if (clutter_density < 0.0 || points_per_m2 < 0.0) fail(ErrorKind::InvalidArgument, "densities must be >= 0");
        if (occluder_prob < 0.0 || occluder_prob > 1.0) fail(ErrorKind::InvalidArgument, "occluder_prob must lie in [0,1]");
        if (!(min_depth > 0.0) || max_depth < min_depth) fail(ErrorKind::InvalidArgument, "invalid depth range");
    }
};

struct SceneFrame {
    PointCloud cloud;  // instance id i belongs to gt_boxes[i - 1]
    RgbImage image;
    InstancePixelMap image_instances;
    std::vector<OrientedBox3D> gt_boxes;
    CameraIntrinsics intrinsics;

    std::map<std::uint32_t, std::string> classes() const {
        std::map<std::uint32_t, std::string> out;
        for (std::size_t i = 0; i < gt_boxes.size(); ++i) out[static_cast<std::uint32_t>(i + 1)] = gt_boxes[i].class_label;
        return out;
    }

    FrameData frame_data() const { return {image, cloud, intrinsics, image_instances, classes()}; }
};

namespace detail {

inline Rgb class_color(const std::string& name) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    h = fnv1a(h, name.data(), name.size());
    h = splitmix64(h);
    return {static_cast<std::uint8_t>(80 + (h & 0x7f)), static_cast<std::uint8_t>(80 + ((h >> 8) & 0x7f)),
            static_cast<std::uint8_t>(80 + ((h >> 16) & 0x7f))};
}

inline Rgb shade(Rgb c, double f) {
    auto s = [f](std::uint8_t x) { return static_cast<std::uint8_t>(std::clamp(std::lround(x * f), 0L, 255L)); };
    return {s(c.r), s(c.g), s(c.b)};
}

inline Mat3 random_rotation(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double u1 = u(rng), u2 = u(rng), u3 = u(rng);
    const double a = std::sqrt(1.0 - u1), b = std::sqrt(u1);
    const Eigen::Quaterniond q(a * std::sin(2 * std::numbers::pi * u2), a * std::cos(2 * std::numbers::pi * u2),
                               b * std::sin(2 * std::numbers::pi * u3), b * std::cos(2 * std::numbers::pi * u3));
    Mat3 r = q.normalized().toRotationMatrix();
    return r;
}

/// Entry parameter of the segment origin -> p into the box, or +inf if it
/// misses. Slab test in box coordinates.
inline double segment_entry(const OrientedBox3D& box, const Vec3& p) {
    const Vec3 o = box.to_local(Vec3::Zero());
    const Vec3 d = box.to_local(p) - o;
    double t0 = 0.0, t1 = 1.0;
    for (int i = 0; i < 3; ++i) {
        const double half = 0.5 * box.extent[i];
        if (std::abs(d[i]) < 1e-15) {
            if (std::abs(o[i]) > half) return std::numeric_limits<double>::infinity();
            continue;
        }
        double ta = (-half - o[i]) / d[i];
        double tb = (half - o[i]) / d[i];
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
        if (t0 > t1) return std::numeric_limits<double>::infinity();
    }
    return t0;
}

struct SurfaceSample {
    Vec3 p;
    Rgb color;
    std::uint32_t instance;
    int owner;          // index into solids, -1 for ground
    bool front_facing;  // face normal points towards the camera
};

inline Vec3 to_float_grid(const Vec3& p) { return p.cast<float>().cast<double>(); }

}  // namespace detail

/// Renders a colored cloud through the pinhole model with a z-buffer and
/// round splats; returns the image and the per-pixel instance ids.
inline std::pair<RgbImage, InstancePixelMap> render_camera_image(const PointCloud& cloud, const CameraIntrinsics& k,
                                                                 int splat_radius) {
    RgbImage image(k.width, k.height);
    InstancePixelMap ids(k.width, k.height);
    std::vector<double> depth(static_cast<std::size_t>(k.width) * k.height, std::numeric_limits<double>::infinity());
    const int r = std::max(0, splat_radius);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const Vec3& p = cloud.positions[i];
        if (!(p.z() > 0.0)) continue;
        const Eigen::Vector2d uv = k.project(p);
        const double fu = std::floor(uv.x()), fv = std::floor(uv.y());
        if (fu < -r || fv < -r || fu >= k.width + r || fv >= k.height + r) continue;
        const int u = static_cast<int>(fu), v = static_cast<int>(fv);
        for (int dv = -r; dv <= r; ++dv) {
            for (int du = -r; du <= r; ++du) {
                if (du * du + dv * dv > r * r) continue;
                const int pu = u + du, pv = v + dv;
                if (pu < 0 || pv < 0 || pu >= k.width || pv >= k.height) continue;
                const auto px = static_cast<std::size_t>(pv) * k.width + pu;
                if (p.z() < depth[px]) {
                    depth[px] = p.z();
                    image.set(pu, pv, cloud.colors[i]);
                    ids.ids[px] = cloud.instance_ids ? (*cloud.instance_ids)[i] : 0;
                }
            }
        }
    }
    return {std::move(image), std::move(ids)};
}

inline SceneFrame generate_scene(const SceneSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(detail::splitmix64(spec.seed));
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };
    const CameraIntrinsics& k = spec.intrinsics;

    SceneFrame frame;
    frame.intrinsics = k;
    const int n_objects = std::uniform_int_distribution<int>(spec.min_objects, spec.max_objects)(rng);
    const double half_fov_x = std::min(k.cx, k.width - k.cx) / k.fx;

    struct Solid {
        OrientedBox3D box;
        Rgb color;
        std::uint32_t instance;
    };
    std::vector<Solid> solids;
    struct Footprint {
        Vec3 center;
        double radius;
        Eigen::Vector4d rect;  // projected corner bounds u0, v0, u1, v1
    };
    std::vector<Footprint> placed;
    auto project_bounds = [&](const OrientedBox3D& box) {
        const CornerMatrix c = box_to_corners(box);
        Eigen::Vector4d r(std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
                          -std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity());
        for (int j = 0; j < 8; ++j) {
            const Eigen::Vector2d uv = k.project(c.block<3, 1>(0, j));
            r = Eigen::Vector4d(std::min(r[0], uv.x()), std::min(r[1], uv.y()), std::max(r[2], uv.x()), std::max(r[3], uv.y()));
        }
        return r;
    };

    // Draws one object of class `cls`; false when it collides with what is
    // already placed.
    auto place_object = [&](const ClassSpec& cls) {
        OrientedBox3D box;
        box.class_label = cls.name;
        box.score = 1.0;
        box.converged = true;
        for (int a = 0; a < 3; ++a) box.extent[a] = uniform(cls.size_min[a], cls.size_max[a]);
        const double radius = 0.5 * box.extent.norm();
        Mat3 rot;
        if (spec.orientation == OrientationMode::upright) {
            rot = Eigen::AngleAxisd(uniform(0.0, std::numbers::pi), Vec3::UnitY()).toRotationMatrix();
        } else {
            rot = detail::random_rotation(rng);
        }
        const double z = uniform(spec.min_depth, spec.max_depth);
        const double xmax = std::max(0.0, z * half_fov_x * 0.8 - radius);
        const double x = uniform(-xmax, xmax);
        double y;
        if (spec.orientation == OrientationMode::upright) {
            y = spec.camera_height - 0.5 * box.extent.y();
        } else {
            const double lowest = spec.camera_height - radius - 0.1;
            y = uniform(lowest - 0.6, lowest);
        }
        const Vec3 center(x, y, z);
        box.pose = RigidTransform(rot, center);
        const Eigen::Vector4d footprint = project_bounds(box);
        bool clear = true;
        for (const auto& other : placed) {
            if ((other.center - center).norm() < other.radius + radius + 0.05) clear = false;
            if (clear && spec.avoid_occlusion) {
                const double gap = 4.0;
                const bool apart = footprint[2] + gap < other.rect[0] || other.rect[2] + gap < footprint[0] ||
                                   footprint[3] + gap < other.rect[1] || other.rect[3] + gap < footprint[1];
                if (!apart) clear = false;
            }
            if (!clear) break;
        }
        if (!clear) return false;
        placed.push_back({center, radius, footprint});
        solids.push_back({box, detail::class_color(cls.name), static_cast<std::uint32_t>(frame.gt_boxes.size() + 1)});
        frame.gt_boxes.push_back(box);
        return true;
    };

    // A layout that paints itself into a corner is discarded and redrawn a
    // bounded number of times before the scene request is declared infeasible.
    constexpr int kLayouts = 20;
    for (int layout = 0;; ++layout) {
        if (layout == kLayouts) fail(ErrorKind::InfeasibleSpec, "could not place all objects without overlap");
        solids.clear();
        placed.clear();
        frame.gt_boxes.clear();
        bool layout_ok = true;
        for (int n = 0; n < std::max(0, n_objects) && layout_ok; ++n) {
            const ClassSpec& cls = spec.classes[static_cast<std::size_t>(u01(rng) * spec.classes.size()) % spec.classes.size()];
            bool ok = false;
            for (int attempt = 0; attempt < 1000 && !ok; ++attempt) ok = place_object(cls);
            layout_ok = ok;
        }
        if (layout_ok) break;
    }

    // Occluding slabs: thin vertical panels between the camera and an object.
    const std::size_t n_targets = solids.size();
    for (std::size_t i = 0; i < n_targets; ++i) {
        if (!(u01(rng) < spec.occluder_prob)) continue;
        const OrientedBox3D& target = solids[i].box;
        OrientedBox3D slab;
        slab.extent = Vec3(0.3 * target.extent.maxCoeff() + 0.1, 0.5 * target.extent.y() + 0.2, 0.02);
        const Vec3 c = target.center();
        const double depth = c.z() - 0.5 * target.extent.norm() - 0.3;
        if (depth < 0.5) continue;
        const Vec3 center(c.x() * depth / c.z() + uniform(-0.2, 0.2), spec.camera_height - 0.5 * slab.extent.y(), depth);
        slab.pose = RigidTransform(Mat3::Identity(), center);
        solids.push_back({slab, {150, 150, 150}, 0});
    }

    std::vector<detail::SurfaceSample> samples;
    for (std::size_t s = 0; s < solids.size(); ++s) {
        const auto& solid = solids[s];
        const Mat3& r = solid.box.pose.rotation();
        for (int axis = 0; axis < 3; ++axis) {
            const int ua = (axis + 1) % 3, va = (axis + 2) % 3;
            for (int sign : {-1, 1}) {
                const Vec3 normal = sign * r.col(axis);
                const Vec3 face_center = solid.box.center() + normal * (0.5 * solid.box.extent[axis]);
                const bool facing = normal.dot(-face_center) > 0.0;
                const double area = solid.box.extent[ua] * solid.box.extent[va];
                const auto count = std::max<long>(1, std::lround(area * spec.points_per_m2));
                const Rgb color = detail::shade(solid.color, 0.6 + 0.08 * (2 * axis + (sign > 0)));
                for (long c = 0; c < count; ++c) {
                    Vec3 local = Vec3::Zero();
                    local[axis] = 0.5 * sign * solid.box.extent[axis];
                    local[ua] = uniform(-0.5, 0.5) * solid.box.extent[ua];
                    local[va] = uniform(-0.5, 0.5) * solid.box.extent[va];
                    samples.push_back({detail::to_float_grid(solid.box.pose.apply(local)), color, solid.instance,
                                       static_cast<int>(s), facing});
                }
            }
        }
    }

    if (spec.clutter_density > 0.0) {
        const double x_half = spec.max_depth * half_fov_x + 1.0;
        const double z0 = 0.5, z1 = spec.max_depth + 3.0;
        const auto count = std::lround(2.0 * x_half * (z1 - z0) * spec.clutter_density);
        for (long c = 0; c < count; ++c) {
            const Vec3 p = detail::to_float_grid(Vec3(uniform(-x_half, x_half), spec.camera_height, uniform(z0, z1)));
            const auto shade = static_cast<std::uint8_t>(60 + static_cast<int>(u01(rng) * 40));
            bool inside = false;
            for (const auto& solid : solids) {
                if (solid.box.contains(p, 0.01)) inside = true;
            }
            if (!inside) samples.push_back({p, {shade, static_cast<std::uint8_t>(shade + 20), shade}, 0, -1, true});
        }
    }

    auto visible = [&](const detail::SurfaceSample& s) {
        if (!s.front_facing) return false;
        for (std::size_t j = 0; j < solids.size(); ++j) {
            if (static_cast<int>(j) == s.owner) continue;
            if (detail::segment_entry(solids[j].box, s.p) < 1.0 - 1e-9) return false;
        }
        return true;
    };

    PointCloud& cloud = frame.cloud;
    cloud.instance_ids.emplace();
    for (const auto& s : samples) {
        if (spec.partial_view && !visible(s)) continue;
        cloud.positions.push_back(s.p);
        cloud.colors.push_back(s.color);
        cloud.instance_ids->push_back(s.instance);
    }
    auto [image, ids] = render_camera_image(cloud, k, spec.image_splat_radius);
    frame.image = std::move(image);
    frame.image_instances = std::move(ids);
    frame.image_instances.classes = frame.classes();
    return frame;
}

}  // namespace rcv
