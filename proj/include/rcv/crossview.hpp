#pragma once

#include <algorithm>
#include <tuple>
#include <vector>

#include "rcv/error.hpp"
#include "rcv/geometry.hpp"
#include "rcv/image.hpp"
#include "rcv/views.hpp"

namespace rcv {

struct Interval {
    double lo = 0.0;
    double hi = 0.0;

    double length() const { return hi - lo; }
    double center() const { return 0.5 * (lo + hi); }
    bool empty() const { return lo > hi; }

    friend Interval intersect(Interval a, Interval b) { return {std::max(a.lo, b.lo), std::min(a.hi, b.hi)}; }
};

inline double interval_iou(Interval a, Interval b) {
    const Interval inter = intersect(a, b);
    const double overlap = std::max(0.0, inter.length());
    const double uni = std::max(a.hi, b.hi) - std::min(a.lo, b.lo);
    if (uni <= 0.0) return a.lo == b.lo ? 1.0 : 0.0;
    return overlap / uni;
}

/// Local in-plane intervals (horizontal, vertical) covered by a pixel rect.
/// Pixels map to their centers, so pixels u0 .. u1-1 span
/// [(u0 - offset)/scale, (u1 - 1 - offset)/scale].
struct ViewIntervals {
    Interval horizontal;
    Interval vertical;
};

inline ViewIntervals back_map(const PseudoView& view, const PixelRect& rect) {
    const PixelRect r = rect.snapped();
    return {{view.u_to_local(r.u0), view.u_to_local(r.u1 - 1.0)},
            {view.v_to_local(r.v0), view.v_to_local(r.v1 - 1.0)}};
}

struct BoxPair {
    Detection2D front;
    Detection2D side;
    double pair_quality = 0.0;
};

/// Box from a front-view and a side-view detection: x from the front view, z
/// from the side view, and the shared vertical dimension from the
/// intersection of both.
inline OrientedBox3D cross_view(const BoxPair& pair, const PseudoView& front_view, const PseudoView& side_view) {
    const auto f = back_map(front_view, pair.front.rect);
    const auto s = back_map(side_view, pair.side.rect);
    const Interval ix = f.horizontal;
    const Interval iz = s.horizontal;
    const Interval iy = intersect(f.vertical, s.vertical);
    if (iy.empty()) {
        fail(ErrorKind::InconsistentViews, "front and side detections do not overlap in the shared vertical dimension");
    }
    const StepFrame& frame = front_view.frame;
    OrientedBox3D box;
    box.extent = Vec3(ix.length(), iy.length(), iz.length()).cwiseMax(1e-3);
    box.pose = RigidTransform(frame.axes.matrix(), frame.to_parent(Vec3(ix.center(), iy.center(), iz.center())));
    box.class_label = pair.front.class_label;
    box.score = 0.0;
    return box;
}

/// Greedy association of same-class front/side detections by the IoU of their
/// vertical intervals in meters.
inline std::vector<BoxPair> pair_boxes(const std::vector<Detection2D>& front_dets, const std::vector<Detection2D>& side_dets,
                                       const PseudoView& front_view, const PseudoView& side_view,
                                       double min_quality = 0.25) {
    struct Candidate {
        double quality;
        std::size_t f;
        std::size_t s;
    };
    std::vector<Candidate> candidates;
    for (std::size_t i = 0; i < front_dets.size(); ++i) {
        const Interval fi = back_map(front_view, front_dets[i].rect).vertical;
        for (std::size_t j = 0; j < side_dets.size(); ++j) {
            if (front_dets[i].class_label != side_dets[j].class_label) continue;
            const double q = interval_iou(fi, back_map(side_view, side_dets[j].rect).vertical);
            if (q > 0.0 && q >= min_quality) candidates.push_back({q, i, j});
        }
    }
    std::stable_sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
        return std::tie(b.quality, a.f, a.s) < std::tie(a.quality, b.f, b.s);
    });
    std::vector<bool> used_f(front_dets.size(), false), used_s(side_dets.size(), false);
    std::vector<BoxPair> pairs;
    for (const auto& c : candidates) {
        if (used_f[c.f] || used_s[c.s]) continue;
        used_f[c.f] = used_s[c.s] = true;
        pairs.push_back({front_dets[c.f], side_dets[c.s], c.quality});
    }
    return pairs;
}

}  // namespace rcv
