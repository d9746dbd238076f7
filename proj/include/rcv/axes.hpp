#pragma once

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "rcv/error.hpp"
#include "rcv/geometry.hpp"
#include "rcv/knn.hpp"

namespace rcv {

enum class AxesMethod { camera, pca, normals };

struct AxesConfig {
    AxesMethod method = AxesMethod::normals;
    int knn_k = 16;
    int kmeans_k = 4;
    int kmeans_iters = 25;
    std::uint64_t seed = 0;

    void validate() const {
        if (knn_k < 3) fail(ErrorKind::ConfigError, "axes.knn_k must be >= 3");
        if (kmeans_k < 1) fail(ErrorKind::ConfigError, "axes.kmeans_k must be >= 1");
        if (kmeans_iters < 1) fail(ErrorKind::ConfigError, "axes.kmeans_iters must be >= 1");
    }
};

inline AxesTriad axes_camera() { return AxesTriad::identity(); }

namespace detail {

inline Mat3 covariance(std::span<const Vec3> points, Vec3* mean_out = nullptr) {
    Vec3 mean = Vec3::Zero();
    for (const auto& p : points) mean += p;
    mean /= static_cast<double>(points.size());
    Mat3 cov = Mat3::Zero();
    for (const auto& p : points) {
        const Vec3 d = p - mean;
        cov += d * d.transpose();
    }
    if (mean_out) *mean_out = mean;
    return cov / static_cast<double>(points.size());
}

/// Flip so the largest-magnitude component is positive (first index wins ties).
inline Vec3 canonical_sign(const Vec3& v) {
    Eigen::Index idx = 0;
    v.cwiseAbs().maxCoeff(&idx);
    return v[idx] < 0 ? Vec3(-v) : v;
}

inline Vec3 any_orthogonal(const Vec3& a) {
    Eigen::Index idx = 0;
    a.cwiseAbs().minCoeff(&idx);
    Vec3 e = Vec3::Zero();
    e[idx] = 1.0;
    return (e - e.dot(a) * a).normalized();
}

}  // namespace detail

/// Principal axes, eigenvalues descending. Signs follow `prev` when given so
/// consecutive recursion steps keep a consistent orientation.
inline AxesTriad axes_pca(std::span<const Vec3> points, const std::optional<AxesTriad>& prev = std::nullopt) {
    if (points.size() < 3) fail(ErrorKind::DegenerateCloud, "pca needs at least 3 points");
    const Mat3 cov = detail::covariance(points);
    Eigen::SelfAdjointEigenSolver<Mat3> solver(cov);
    if (solver.info() != Eigen::Success) fail(ErrorKind::DegenerateCloud, "eigen decomposition failed");
    const Eigen::Vector3d values = solver.eigenvalues();  // ascending
    if (!(values[2] > 0.0) || values[1] <= 1e-12 * values[2]) fail(ErrorKind::DegenerateCloud, "covariance rank < 2");
    Vec3 a1 = solver.eigenvectors().col(2);
    Vec3 a2 = solver.eigenvectors().col(1);
    if (prev) {
        if (a1.dot(prev->a1()) < 0) a1 = -a1;
        if (a2.dot(prev->a2()) < 0) a2 = -a2;
    } else {
        a1 = detail::canonical_sign(a1);
        a2 = detail::canonical_sign(a2);
    }
    a1.normalize();
    a2 = (a2 - a2.dot(a1) * a1).normalized();
    return {a1, a2, a1.cross(a2)};
}

/// Unit normals from the covariance of each point's k nearest neighbors,
/// oriented towards `viewpoint`.
inline std::vector<Vec3> estimate_normals(std::span<const Vec3> points, int knn_k, const Vec3& viewpoint) {
    if (knn_k < 3) fail(ErrorKind::InvalidArgument, "knn_k must be >= 3");
    if (points.size() <= static_cast<std::size_t>(knn_k)) fail(ErrorKind::DegenerateCloud, "too few points for normal estimation");
    const KdTree tree(points);
    std::vector<Vec3> normals;
    normals.reserve(points.size());
    std::vector<Vec3> neighborhood;
    for (const auto& p : points) {
        neighborhood.clear();
        for (auto j : tree.nearest(p, static_cast<std::size_t>(knn_k))) neighborhood.push_back(points[j]);
        Eigen::SelfAdjointEigenSolver<Mat3> solver(detail::covariance(neighborhood));
        Vec3 n = solver.eigenvectors().col(0).normalized();
        if (n.dot(viewpoint - p) < 0) n = -n;
        normals.push_back(n);
    }
    return normals;
}

struct KMeansResult {
    std::vector<Vec3> centroids;
    std::vector<int> assignment;
    std::vector<std::size_t> sizes;
    std::vector<double> objective;  // after every assignment pass
};

/// Lloyd's algorithm with deterministic farthest-point seeding. The first
/// centroid is sample `seed mod n`.
inline KMeansResult kmeans(std::span<const Vec3> data, int k, int max_iters, std::uint64_t seed) {
    if (data.empty()) fail(ErrorKind::DegenerateCloud, "kmeans on empty data");
    k = std::max(1, std::min<int>(k, static_cast<int>(data.size())));
    KMeansResult res;
    // Seeds are restricted to points with dense surroundings: farthest-point
    // selection would otherwise pick the scattered normals found along box
    // edges and waste clusters on them. Density is counted against a strided
    // sample of at most 256 points.
    const std::size_t stride = std::max<std::size_t>(1, data.size() / 256);
    std::size_t sample_size = 0;
    for (std::size_t j = 0; j < data.size(); j += stride) ++sample_size;
    const std::size_t min_support = std::max<std::size_t>(2, sample_size / 50);
    std::vector<bool> dense(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        std::size_t support = 0;
        for (std::size_t j = 0; j < data.size() && support < min_support; j += stride) {
            support += (data[i] - data[j]).squaredNorm() < 0.07;  // about 15 degrees on the unit sphere
        }
        dense[i] = support >= min_support;
    }
    if (std::find(dense.begin(), dense.end(), true) == dense.end()) dense.assign(data.size(), true);

    std::size_t first = seed % data.size();
    while (!dense[first]) first = (first + 1) % data.size();
    res.centroids.push_back(data[first]);
    std::vector<double> dmin(data.size(), std::numeric_limits<double>::infinity());
    while (static_cast<int>(res.centroids.size()) < k) {
        std::size_t best = first;
        for (std::size_t i = 0; i < data.size(); ++i) {
            dmin[i] = std::min(dmin[i], (data[i] - res.centroids.back()).squaredNorm());
            if (dense[i] && dmin[i] > dmin[best]) best = i;
        }
        res.centroids.push_back(data[best]);
    }

    res.assignment.assign(data.size(), -1);
    for (int iter = 0; iter < max_iters; ++iter) {
        bool changed = false;
        double objective = 0.0;
        for (std::size_t i = 0; i < data.size(); ++i) {
            int arg = 0;
            double best = std::numeric_limits<double>::infinity();
            for (int c = 0; c < k; ++c) {
                const double d = (data[i] - res.centroids[c]).squaredNorm();
                if (d < best) {
                    best = d;
                    arg = c;
                }
            }
            objective += best;
            if (res.assignment[i] != arg) {
                res.assignment[i] = arg;
                changed = true;
            }
        }
        res.objective.push_back(objective);
        if (!changed) break;
        std::vector<Vec3> sum(k, Vec3::Zero());
        std::vector<std::size_t> count(k, 0);
        for (std::size_t i = 0; i < data.size(); ++i) {
            sum[res.assignment[i]] += data[i];
            ++count[res.assignment[i]];
        }
        for (int c = 0; c < k; ++c) {
            if (count[c] > 0) res.centroids[c] = sum[c] / static_cast<double>(count[c]);
        }
    }
    res.sizes.assign(k, 0);
    for (int a : res.assignment) ++res.sizes[a];
    return res;
}

/// Axes from the dominant surface normal: a3 looks onto the dominant face.
/// a2 is taken from the face-aligned directions given by the next largest
/// roughly orthogonal normal cluster, choosing the one closest to the previous
/// a2; without such a cluster the previous a2 is projected onto the face plane.
inline AxesTriad axes_normals(std::span<const Vec3> points, const AxesConfig& cfg,
                              const std::optional<AxesTriad>& prev, const Vec3& viewpoint) {
    const auto normals = estimate_normals(points, cfg.knn_k, viewpoint);
    const auto km = kmeans(normals, cfg.kmeans_k, cfg.kmeans_iters, cfg.seed);

    std::vector<int> order(km.centroids.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return km.sizes[a] > km.sizes[b]; });

    const Vec3 major = km.centroids[order[0]];
    if (major.norm() < 1e-9) fail(ErrorKind::DegenerateCloud, "dominant normal cluster cancels out");
    const Vec3 a3 = -major.normalized();

    const Vec3 up(0.0, -1.0, 0.0);
    const Vec3 reference = prev ? prev->a2() : up;
    auto project = [&](const Vec3& v) { return Vec3(v - v.dot(a3) * a3); };

    Vec3 a2 = Vec3::Zero();
    const std::size_t min_support = std::max<std::size_t>(3, normals.size() / 20);
    for (std::size_t r = 1; r < order.size(); ++r) {
        const int c = order[r];
        const Vec3 centroid = km.centroids[c];
        if (km.sizes[c] < min_support || centroid.norm() < 1e-9) continue;
        if (std::abs(centroid.normalized().dot(a3)) >= 0.5) continue;
        const Vec3 d = project(centroid).normalized();
        const Vec3 e = a3.cross(d);
        const Vec3 candidates[4] = {d, -d, e, -e};
        double best = -std::numeric_limits<double>::infinity();
        for (const auto& cand : candidates) {
            const double score = cand.dot(reference);
            if (score > best) {
                best = score;
                a2 = cand;
            }
        }
        break;
    }
    if (a2.squaredNorm() == 0.0) {
        for (const Vec3& candidate : {reference, up}) {
            const Vec3 p = project(candidate);
            if (p.norm() > 1e-6) {
                a2 = p.normalized();
                break;
            }
        }
    }
    if (a2.squaredNorm() == 0.0) a2 = detail::any_orthogonal(a3);
    a2 = project(a2).normalized();
    return {a2.cross(a3), a2, a3};
}

/// Dispatch on the configured method; `prev` and `viewpoint` are expressed in
/// the same frame as `points`.
inline AxesTriad estimate_axes(std::span<const Vec3> points, const AxesConfig& cfg,
                               const std::optional<AxesTriad>& prev, const Vec3& viewpoint) {
    switch (cfg.method) {
        case AxesMethod::camera: return axes_camera();
        case AxesMethod::pca: return axes_pca(points, prev);
        case AxesMethod::normals: return axes_normals(points, cfg, prev, viewpoint);
    }
    return axes_camera();
}

}  // namespace rcv
