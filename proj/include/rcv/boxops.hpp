#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "rcv/geometry.hpp"

namespace rcv {

namespace detail {

struct Plane {
    Vec3 normal;  // outward unit normal
    double offset;  // inside: normal . x <= offset
};

struct Face {
    std::vector<Vec3> points;  // counter-clockwise seen from outside
    Vec3 normal;
};

/// Faces of a box, expressed relative to `origin`.
inline std::vector<Face> box_faces(const OrientedBox3D& box, const Vec3& origin) {
    const CornerMatrix c = box_to_corners(box);
    auto corner = [&](int j) { return Vec3(c.block<3, 1>(0, j) - origin); };
    const Mat3& r = box.pose.rotation();
    // Corner index bits: x = 4, y = 2, z = 1. Each face lists its corners
    // counter-clockwise around the outward normal.
    static constexpr std::array<std::array<int, 4>, 6> idx = {{
        {0, 1, 3, 2},  // -x
        {4, 6, 7, 5},  // +x
        {0, 4, 5, 1},  // -y
        {2, 3, 7, 6},  // +y
        {0, 2, 6, 4},  // -z
        {1, 5, 7, 3},  // +z
    }};
    std::vector<Face> faces;
    for (int f = 0; f < 6; ++f) {
        Face face;
        const double sign = (f % 2 == 0) ? -1.0 : 1.0;
        face.normal = sign * r.col(f / 2);
        for (int j : idx[f]) face.points.push_back(corner(j));
        faces.push_back(std::move(face));
    }
    return faces;
}

inline std::vector<Plane> box_planes(const OrientedBox3D& box, const Vec3& origin) {
    std::vector<Plane> planes;
    const Mat3& r = box.pose.rotation();
    const Vec3 c = box.center() - origin;
    for (int axis = 0; axis < 3; ++axis) {
        const Vec3 n = r.col(axis);
        const double half = 0.5 * box.extent[axis];
        planes.push_back({-n, -n.dot(c) + half});
        planes.push_back({n, n.dot(c) + half});
    }
    return planes;
}

/// Sutherland-Hodgman clip of one convex polygon against a half-space.
inline std::vector<Vec3> clip_polygon(const std::vector<Vec3>& poly, const Plane& plane, double eps) {
    std::vector<Vec3> out;
    const std::size_t n = poly.size();
    for (std::size_t i = 0; i < n; ++i) {
        const Vec3& p = poly[i];
        const Vec3& q = poly[(i + 1) % n];
        const double dp = plane.normal.dot(p) - plane.offset;
        const double dq = plane.normal.dot(q) - plane.offset;
        const bool pin = dp <= eps;
        const bool qin = dq <= eps;
        if (pin) out.push_back(p);
        if (pin != qin && std::abs(dp - dq) > 0.0) {
            const double t = dp / (dp - dq);
            if (t > 0.0 && t < 1.0) out.push_back(p + t * (q - p));
        }
    }
    return out;
}

/// Orders coplanar points counter-clockwise around `normal` after removing
/// near-duplicates.
inline std::vector<Vec3> order_cap(std::vector<Vec3> pts, const Vec3& normal, double eps) {
    std::vector<Vec3> unique;
    for (const auto& p : pts) {
        bool dup = false;
        for (const auto& u : unique) {
            if ((u - p).norm() <= eps) {
                dup = true;
                break;
            }
        }
        if (!dup) unique.push_back(p);
    }
    if (unique.size() < 3) return {};
    Vec3 center = Vec3::Zero();
    for (const auto& p : unique) center += p;
    center /= static_cast<double>(unique.size());
    Vec3 e1 = (std::abs(normal.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY()).cross(normal).normalized();
    const Vec3 e2 = normal.cross(e1);
    std::vector<std::pair<double, Vec3>> angular;
    for (const auto& p : unique) angular.emplace_back(std::atan2((p - center).dot(e2), (p - center).dot(e1)), p);
    std::sort(angular.begin(), angular.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<Vec3> out;
    for (const auto& [angle, p] : angular) out.push_back(p);
    return out;
}

/// Divergence theorem: V = sum over faces of the signed tetrahedra spanned by
/// the origin and a fan triangulation of the face.
inline double polytope_volume(const std::vector<Face>& faces) {
    double v = 0.0;
    for (const auto& f : faces) {
        for (std::size_t i = 1; i + 1 < f.points.size(); ++i) {
            v += f.points[0].dot(f.points[i].cross(f.points[i + 1]));
        }
    }
    return v / 6.0;
}

}  // namespace detail

/// Volume of the intersection of two oriented boxes: box a's polytope is
/// clipped against the six half-spaces of box b and the result integrated
/// over its faces.
inline double intersection_volume(const OrientedBox3D& a, const OrientedBox3D& b) {
    const double ra = 0.5 * a.extent.norm();
    const double rb = 0.5 * b.extent.norm();
    if ((a.center() - b.center()).norm() >= ra + rb) return 0.0;

    const Vec3 origin = a.center();
    const double eps = 1e-12 * std::max({1.0, ra, rb});
    auto faces = detail::box_faces(a, origin);
    for (const auto& plane : detail::box_planes(b, origin)) {
        std::vector<detail::Face> next;
        std::vector<Vec3> cap;
        bool coplanar_face = false;
        for (const auto& face : faces) {
            bool on_plane = true;
            for (const auto& p : face.points) {
                if (std::abs(plane.normal.dot(p) - plane.offset) > eps) {
                    on_plane = false;
                    break;
                }
            }
            if (on_plane && face.normal.dot(plane.normal) > 0.0) {
                coplanar_face = true;
                next.push_back(face);
                continue;
            }
            auto clipped = detail::clip_polygon(face.points, plane, eps);
            for (const auto& p : clipped) {
                if (std::abs(plane.normal.dot(p) - plane.offset) <= eps) cap.push_back(p);
            }
            if (clipped.size() >= 3) next.push_back({std::move(clipped), face.normal});
        }
        if (!coplanar_face) {
            auto ordered = detail::order_cap(std::move(cap), plane.normal, eps * 10.0);
            if (ordered.size() >= 3) next.push_back({std::move(ordered), plane.normal});
        }
        faces = std::move(next);
        if (faces.size() < 4) return 0.0;
    }
    return std::max(0.0, detail::polytope_volume(faces));
}

inline double iou3d(const OrientedBox3D& a, const OrientedBox3D& b) {
    const double inter = intersection_volume(a, b);
    const double uni = a.volume() + b.volume() - inter;
    if (uni <= 0.0) return 0.0;
    return std::clamp(inter / uni, 0.0, 1.0);
}

/// Orders by descending score, ties by lexicographic center.
inline bool score_order(const OrientedBox3D& a, const OrientedBox3D& b) {
    if (a.score != b.score) return a.score > b.score;
    return center_less(a, b);
}

/// Greedy class-wise suppression; output is in keep order.
inline std::vector<OrientedBox3D> nms3d(std::vector<OrientedBox3D> boxes, double tau = 0.25) {
    std::stable_sort(boxes.begin(), boxes.end(), score_order);
    std::vector<OrientedBox3D> kept;
    for (auto& box : boxes) {
        bool keep = true;
        for (const auto& k : kept) {
            if (k.class_label == box.class_label && iou3d(k, box) >= tau) {
                keep = false;
                break;
            }
        }
        if (keep) kept.push_back(std::move(box));
    }
    return kept;
}

enum class ApMode { allpoint, r40 };

inline const char* to_string(ApMode m) { return m == ApMode::allpoint ? "allpoint" : "R40"; }

/// Predictions and ground truth of one class within one frame.
struct EvalFrame {
    std::vector<OrientedBox3D> predictions;
    std::vector<OrientedBox3D> ground_truth;
};

struct MatchResult {
    struct Entry {
        double score = 0.0;
        std::optional<std::size_t> frame;
        std::optional<std::size_t> gt;  // matched ground-truth index within its frame
        double iou = 0.0;
    };
    std::vector<Entry> detections;  // in processing (descending score) order
    std::vector<double> precision;
    std::vector<double> recall;
    std::vector<std::size_t> true_positives;  // cumulative
    std::size_t num_gt = 0;
};

/// Greedy matching in descending score: a prediction is a true positive iff
/// its best-IoU still unmatched ground truth reaches `iou_thresh`.
inline MatchResult match_predictions(const std::vector<EvalFrame>& frames, double iou_thresh) {
    struct Ref {
        std::size_t frame, index;
        double score;
    };
    std::vector<Ref> refs;
    MatchResult result;
    for (std::size_t f = 0; f < frames.size(); ++f) {
        result.num_gt += frames[f].ground_truth.size();
        for (std::size_t i = 0; i < frames[f].predictions.size(); ++i) refs.push_back({f, i, frames[f].predictions[i].score});
    }
    std::stable_sort(refs.begin(), refs.end(), [](const Ref& a, const Ref& b) { return a.score > b.score; });
    std::vector<std::vector<bool>> used(frames.size());
    for (std::size_t f = 0; f < frames.size(); ++f) used[f].assign(frames[f].ground_truth.size(), false);

    std::size_t tp = 0;
    for (const auto& ref : refs) {
        const auto& pred = frames[ref.frame].predictions[ref.index];
        const auto& gts = frames[ref.frame].ground_truth;
        double best = -1.0;
        std::optional<std::size_t> best_gt;
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (used[ref.frame][g]) continue;
            const double iou = iou3d(pred, gts[g]);
            if (iou > best) {
                best = iou;
                best_gt = g;
            }
        }
        MatchResult::Entry e;
        e.score = ref.score;
        e.frame = ref.frame;
        if (best_gt && best >= iou_thresh) {
            used[ref.frame][*best_gt] = true;
            e.gt = best_gt;
            e.iou = best;
            ++tp;
        } else {
            e.iou = std::max(0.0, best);
        }
        result.detections.push_back(e);
        result.true_positives.push_back(tp);
        const double n = static_cast<double>(result.detections.size());
        result.precision.push_back(static_cast<double>(tp) / n);
        result.recall.push_back(result.num_gt ? static_cast<double>(tp) / static_cast<double>(result.num_gt) : 0.0);
    }
    return result;
}

/// Average precision from a match result. The precision curve is made
/// monotone by a right-to-left running max. `allpoint` integrates the
/// resulting staircase exactly; `r40` averages the interpolated precision at
/// recall 1/40, 2/40, ..., 1. Absent when there is no ground truth.
inline std::optional<double> average_precision(const MatchResult& m, ApMode mode) {
    if (m.num_gt == 0) return std::nullopt;
    const std::size_t n = m.precision.size();
    std::vector<double> interp(m.precision);
    for (std::size_t i = n; i-- > 1;) interp[i - 1] = std::max(interp[i - 1], interp[i]);

    if (mode == ApMode::allpoint) {
        double ap = 0.0;
        std::size_t prev_tp = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (m.true_positives[i] > prev_tp) {
                ap += static_cast<double>(m.true_positives[i] - prev_tp) / static_cast<double>(m.num_gt) * interp[i];
                prev_tp = m.true_positives[i];
            }
        }
        return ap;
    }
    double sum = 0.0;
    for (std::size_t k = 1; k <= 40; ++k) {
        // First rank whose recall reaches k/40, compared in integers.
        for (std::size_t i = 0; i < n; ++i) {
            if (m.true_positives[i] * 40 >= k * m.num_gt) {
                sum += interp[i];
                break;
            }
        }
    }
    return sum / 40.0;
}

inline std::optional<double> average_precision(const std::vector<OrientedBox3D>& predictions,
                                               const std::vector<OrientedBox3D>& ground_truth, double iou_thresh,
                                               ApMode mode) {
    return average_precision(match_predictions({{predictions, ground_truth}}, iou_thresh), mode);
}

}  // namespace rcv
