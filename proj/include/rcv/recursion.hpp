#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <map>
#include <mutex>
#include <numbers>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "rcv/axes.hpp"
#include "rcv/boxops.hpp"
#include "rcv/crossview.hpp"
#include "rcv/detect.hpp"
#include "rcv/error.hpp"
#include "rcv/geometry.hpp"
#include "rcv/views.hpp"

namespace rcv {

enum class MissPolicy { return_last, drop };

struct RecursionConfig {
    AxesConfig axes;
    int max_steps = 8;
    double eps_axes_deg = 3.0;
    double eps_box_m = 0.02;
    bool emit_coarse_box = false;
    MissPolicy on_detector_miss = MissPolicy::return_last;
    RenderConfig render;
    double pair_min_quality = 0.25;

    void validate() const {
        axes.validate();
        if (max_steps < 1) fail(ErrorKind::ConfigError, "recursion.max_steps must be >= 1");
        if (!(eps_axes_deg > 0.0) || !(eps_box_m > 0.0)) fail(ErrorKind::ConfigError, "recursion eps values must be > 0");
        if (render.max_side <= 2 * render.margin + 1) fail(ErrorKind::ConfigError, "render.max_side too small for margin");
        if (render.splat_radius < 0) fail(ErrorKind::ConfigError, "render.splat_radius must be >= 0");
    }
};

/// One completed step, all geometry in the sensor frame.
struct StepRecord {
    int step = 0;
    AxesTriad axes;
    Vec3 origin = Vec3::Zero();
    std::size_t points_before = 0;
    std::size_t points_after = 0;
    OrientedBox3D box;
};

/// State of one recursion branch after `step` completed steps. Coordinates of
/// step k live in the frame reached through chain[0..k); `box` is expressed
/// in the innermost of these frames.
struct RecursionState {
    int step = 0;
    std::vector<std::size_t> indices;
    StepFrame frame;  // frame of the last completed step, in its parent's coordinates
    std::vector<RigidTransform> chain;
    std::optional<OrientedBox3D> box;
    std::vector<StepRecord> trace;

    RigidTransform to_sensor() const { return accumulate(chain); }

    std::optional<OrientedBox3D> sensor_box() const {
        if (!box) return std::nullopt;
        return chain_to_origin(*box, chain);
    }
};

/// Everything rendered for one step: the retained points re-expressed in the
/// step's parent coordinates and the two pseudo-views.
struct StepViews {
    int step = 0;
    PointCloud local;  // retained points, in the step's parent coordinates
    std::vector<std::size_t> local_indices;
    StepFrame frame;
    PseudoView front;
    PseudoView side;
    std::optional<InstancePixelMap> front_instances;
    std::optional<InstancePixelMap> side_instances;
};

struct FrustumContext {
    const PointCloud* cloud = nullptr;
    Vec3 viewpoint = Vec3::Zero();  // sensor frame
    const std::map<std::uint32_t, std::string>* classes = nullptr;
};

/// Sorts point indices by point content so processing order does not depend
/// on the order of the input cloud.
inline std::vector<std::size_t> canonical_order(const PointCloud& cloud, std::vector<std::size_t> indices) {
    auto key = [&](std::size_t i) {
        const Vec3& p = cloud.positions[i];
        const Rgb c = cloud.colors[i];
        const std::uint32_t id = cloud.instance_ids ? (*cloud.instance_ids)[i] : 0;
        return std::make_tuple(p.x(), p.y(), p.z(), c.r, c.g, c.b, id);
    };
    std::stable_sort(indices.begin(), indices.end(), [&](std::size_t a, std::size_t b) { return key(a) < key(b); });
    return indices;
}

inline RecursionState initial_state(const PointCloud& cloud, std::vector<std::size_t> frustum_indices) {
    if (frustum_indices.empty()) fail(ErrorKind::EmptyFrustum, "frustum has no points");
    RecursionState s;
    s.indices = canonical_order(cloud, std::move(frustum_indices));
    return s;
}

/// Computes the projection axes of the next step (camera axes at step 0) and
/// renders both pseudo-views. Axis estimation that fails on a degenerate point
/// set keeps the previous axes.
inline StepViews prepare_step(const FrustumContext& ctx, const RecursionState& state, const RecursionConfig& cfg) {
    const PointCloud& cloud = *ctx.cloud;
    const RigidTransform to_local = state.to_sensor().inverse();
    StepViews views;
    views.step = state.step;
    views.local.positions.reserve(state.indices.size());
    views.local.colors.reserve(state.indices.size());
    if (cloud.instance_ids) views.local.instance_ids.emplace().reserve(state.indices.size());
    for (auto i : state.indices) {
        views.local.positions.push_back(to_local.apply(cloud.positions[i]));
        views.local.colors.push_back(cloud.colors[i]);
        if (cloud.instance_ids) views.local.instance_ids->push_back((*cloud.instance_ids)[i]);
    }
    views.local_indices.resize(state.indices.size());
    std::iota(views.local_indices.begin(), views.local_indices.end(), std::size_t{0});

    AxesTriad axes = axes_camera();
    if (state.step > 0) {
        try {
            axes = estimate_axes(views.local.positions, cfg.axes, AxesTriad::identity(), to_local.apply(ctx.viewpoint));
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::DegenerateCloud) throw;
        }
    }
    views.frame = {axes, centroid(views.local, views.local_indices)};
    views.front = render_pseudo_view(views.local, views.local_indices, views.frame, ViewKind::front, cfg.render);
    views.side = render_pseudo_view(views.local, views.local_indices, views.frame, ViewKind::side, cfg.render);
    if (views.local.instance_ids && ctx.classes) {
        views.front_instances = render_instance_map(views.front, views.local, *ctx.classes);
        views.side_instances = render_instance_map(views.side, views.local, *ctx.classes);
    }
    return views;
}

/// Prunes with one front/side pair, builds the cross-view box and appends the
/// step's transform to the chain.
inline RecursionState advance(const RecursionState& state, const StepViews& views, const BoxPair& pair) {
    const auto kept_local = prune_by_boxes(views.local_indices, views.front, views.side, pair.front, pair.side);
    const OrientedBox3D box_parent = cross_view(pair, views.front, views.side);

    RecursionState next;
    next.step = state.step + 1;
    next.indices.reserve(kept_local.size());
    for (auto k : kept_local) next.indices.push_back(state.indices[k]);
    next.frame = views.frame;
    next.chain = state.chain;
    next.chain.push_back(views.frame.transform());
    next.box = transformed(box_parent, views.frame.transform().inverse());
    next.trace = state.trace;

    const RigidTransform parent_to_sensor = state.to_sensor();
    StepRecord rec;
    rec.step = state.step;
    rec.axes = AxesTriad(parent_to_sensor.rotation() * views.frame.axes.matrix());
    rec.origin = parent_to_sensor.apply(views.frame.origin);
    rec.points_before = state.indices.size();
    rec.points_after = next.indices.size();
    rec.box = transformed(box_parent, parent_to_sensor);
    next.trace.push_back(rec);
    return next;
}

/// Largest angle (degrees) between corresponding axes, ignoring sign.
inline double axes_variation_deg(const AxesTriad& a, const AxesTriad& b) {
    double worst = 0.0;
    for (int i = 0; i < 3; ++i) {
        const double c = std::clamp(std::abs(a.matrix().col(i).dot(b.matrix().col(i))), 0.0, 1.0);
        worst = std::max(worst, std::acos(c) * 180.0 / std::numbers::pi);
    }
    return worst;
}

/// Symmetric Hausdorff distance between the corner sets of two boxes (meters),
/// so relabelled box axes do not count as motion.
inline double box_variation_m(const OrientedBox3D& a, const OrientedBox3D& b) {
    const CornerMatrix ca = box_to_corners(a);
    const CornerMatrix cb = box_to_corners(b);
    auto directed = [](const CornerMatrix& x, const CornerMatrix& y) {
        double worst = 0.0;
        for (int i = 0; i < 8; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (int j = 0; j < 8; ++j) best = std::min(best, (x.col(i) - y.col(j)).head<3>().norm());
            worst = std::max(worst, best);
        }
        return worst;
    };
    return std::max(directed(ca, cb), directed(cb, ca));
}

enum class StopReason { none, axes, box, step_cap };

inline StopReason convergence_reason(const RecursionState& prev, const RecursionState& cur, const RecursionConfig& cfg) {
    // cur.frame is expressed in prev's innermost coordinates, where prev's own
    // axes are the identity.
    if (prev.step > 0 && axes_variation_deg(cur.frame.axes, AxesTriad::identity()) < cfg.eps_axes_deg) return StopReason::axes;
    const auto pb = prev.sensor_box();
    const auto cb = cur.sensor_box();
    if (pb && cb && box_variation_m(*pb, *cb) < cfg.eps_box_m) return StopReason::box;
    if (cur.step >= cfg.max_steps) return StopReason::step_cap;
    return StopReason::none;
}

inline bool converged(const RecursionState& prev, const RecursionState& cur, const RecursionConfig& cfg) {
    return convergence_reason(prev, cur, cfg) != StopReason::none;
}

/// Highest-scoring detection, first one on ties.
inline std::optional<Detection2D> best_detection(const std::vector<Detection2D>& dets) {
    std::optional<Detection2D> best;
    for (const auto& d : dets) {
        if (!best || d.score > best->score) best = d;
    }
    return best;
}

inline std::vector<Detection2D> detect_view(Detector& detector, const PseudoView& view,
                                            const std::optional<InstancePixelMap>& instances, const std::string& label) {
    DetectorInput input{view.image, instances ? &*instances : nullptr};
    auto dets = detector.detect(input, label);
    std::vector<Detection2D> out;
    for (auto& d : dets) {
        if (d.class_label != label) continue;
        d.rect = d.rect.clamped(view.image.width, view.image.height);
        if (d.rect.snapped().valid()) out.push_back(std::move(d));
    }
    return out;
}

struct BranchOutcome {
    std::optional<OrientedBox3D> box;  // sensor frame
    RecursionState final_state;
    StopReason reason = StopReason::none;
    bool missed = false;
};

struct FrustumResult {
    std::vector<OrientedBox3D> boxes;
    std::optional<OrientedBox3D> coarse_box;
    std::vector<BranchOutcome> branches;
};

inline OrientedBox3D finalize_box(const RecursionState& state, const Detection2D& seed, bool converged_flag) {
    OrientedBox3D box = *state.sensor_box();
    box.class_label = seed.class_label;
    box.score = seed.score;
    box.converged = converged_flag;
    box.steps = state.step;
    return box;
}

/// Continues one branch from a state that already holds a box until a
/// convergence criterion fires or the detector misses.
inline BranchOutcome run_branch(const FrustumContext& ctx, RecursionState state, const Detection2D& seed,
                                Detector& detector, const RecursionConfig& cfg) {
    BranchOutcome out;
    auto miss = [&](RecursionState s) {
        out.missed = true;
        if (cfg.on_detector_miss == MissPolicy::return_last) out.box = finalize_box(s, seed, false);
        out.final_state = std::move(s);
        return out;
    };
    if (state.step >= cfg.max_steps) {
        out.reason = StopReason::step_cap;
        out.box = finalize_box(state, seed, false);
        out.final_state = std::move(state);
        return out;
    }
    while (true) {
        RecursionState next;
        try {
            const StepViews views = prepare_step(ctx, state, cfg);
            const auto f = best_detection(detect_view(detector, views.front, views.front_instances, seed.class_label));
            const auto s = best_detection(detect_view(detector, views.side, views.side_instances, seed.class_label));
            if (!f || !s) return miss(std::move(state));
            next = advance(state, views, {*f, *s, interval_iou(back_map(views.front, f->rect).vertical,
                                                                 back_map(views.side, s->rect).vertical)});
        } catch (const Error& e) {
            switch (e.kind()) {
                case ErrorKind::DetectorUnavailable:
                case ErrorKind::DegenerateExtent:
                case ErrorKind::EmptyAfterPrune:
                case ErrorKind::InconsistentViews:
                    return miss(std::move(state));
                default:
                    throw;
            }
        }
        const StopReason reason = convergence_reason(state, next, cfg);
        state = std::move(next);
        if (reason != StopReason::none) {
            out.reason = reason;
            out.box = finalize_box(state, seed, reason != StopReason::step_cap);
            out.final_state = std::move(state);
            return out;
        }
    }
}

/// Step 0 on camera axes may branch into several objects; every branch is
/// then refined independently.
inline FrustumResult run_frustum(const FrustumContext& ctx, std::vector<std::size_t> frustum_indices,
                                 const Detection2D& seed, Detector& detector, const RecursionConfig& cfg) {
    FrustumResult result;
    const RecursionState start = initial_state(*ctx.cloud, std::move(frustum_indices));
    StepViews views;
    try {
        views = prepare_step(ctx, start, cfg);
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::DegenerateExtent) return result;
        throw;
    }
    if (cfg.emit_coarse_box) {
        OrientedBox3D coarse = coarse_box(*ctx.cloud, start.indices, {axes_camera(), views.frame.origin});
        coarse.class_label = seed.class_label;
        coarse.score = seed.score;
        result.coarse_box = coarse;
    }

    std::vector<Detection2D> front, side;
    try {
        front = detect_view(detector, views.front, views.front_instances, seed.class_label);
        side = detect_view(detector, views.side, views.side_instances, seed.class_label);
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::DetectorUnavailable) return result;
        throw;
    }
    for (const auto& pair : pair_boxes(front, side, views.front, views.side, cfg.pair_min_quality)) {
        RecursionState first;
        try {
            first = advance(start, views, pair);
        } catch (const Error& e) {
            if (e.kind() == ErrorKind::EmptyAfterPrune || e.kind() == ErrorKind::InconsistentViews) continue;
            throw;
        }
        auto outcome = run_branch(ctx, std::move(first), seed, detector, cfg);
        if (outcome.box) result.boxes.push_back(*outcome.box);
        result.branches.push_back(std::move(outcome));
    }
    return result;
}

struct FrameData {
    RgbImage image;
    PointCloud cloud;
    CameraIntrinsics intrinsics;
    std::optional<InstancePixelMap> image_instances;  // oracle side channel
    std::map<std::uint32_t, std::string> classes;     // instance id -> class
};

/// Runs `count` independent jobs on up to `parallelism` threads.
inline void parallel_for(std::size_t count, int parallelism, const std::function<void(std::size_t)>& job) {
    const auto workers = static_cast<std::size_t>(std::max(1, parallelism));
    if (workers == 1 || count <= 1) {
        for (std::size_t i = 0; i < count; ++i) job(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < std::min(workers, count); ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < count; i = next++) {
                try {
                    job(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

struct SceneOptions {
    double nms_tau = 0.25;
    int parallelism = 1;
    std::vector<std::string>* warnings = nullptr;
};

/// Seeds frustums with the image detector, runs every frustum and suppresses
/// duplicates. Output is sorted by descending score, ties by center.
inline std::vector<OrientedBox3D> detect_scene(const FrameData& frame, Detector& rgb_detector, Detector& pv_detector,
                                               const RecursionConfig& cfg, const SceneOptions& options = {}) {
    cfg.validate();
    if (frame.cloud.empty()) return {};
    std::vector<Detection2D> seeds;
    try {
        seeds = rgb_detector.detect({frame.image, frame.image_instances ? &*frame.image_instances : nullptr}, std::nullopt);
    } catch (const Error& e) {
        if (e.kind() != ErrorKind::DetectorUnavailable) throw;
        if (options.warnings) options.warnings->push_back(e.what());
        return {};
    }
    const FrustumContext ctx{&frame.cloud, Vec3::Zero(), &frame.classes};
    std::vector<std::vector<OrientedBox3D>> per_seed(seeds.size());
    std::vector<std::string> errors(seeds.size());
    parallel_for(seeds.size(), options.parallelism, [&](std::size_t i) {
        try {
            Detection2D seed = seeds[i];
            seed.rect = seed.rect.clamped(frame.intrinsics.width, frame.intrinsics.height);
            auto indices = extract_frustum(frame.cloud, frame.intrinsics, seed);
            per_seed[i] = run_frustum(ctx, std::move(indices), seed, pv_detector, cfg).boxes;
        } catch (const Error& e) {
            errors[i] = e.what();
        }
    });
    std::vector<OrientedBox3D> all;
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        if (!errors[i].empty() && options.warnings) options.warnings->push_back("seed " + std::to_string(i) + ": " + errors[i]);
        all.insert(all.end(), per_seed[i].begin(), per_seed[i].end());
    }
    return nms3d(std::move(all), options.nms_tau);
}

}  // namespace rcv
