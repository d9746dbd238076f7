#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rcv/error.hpp"

namespace rcv {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using CornerMatrix = Eigen::Matrix<double, 4, 8>;

inline constexpr double kRotationTolerance = 1e-9;

struct Rgb {
    std::uint8_t r = 0;
    std::uint8_t g = 0;
    std::uint8_t b = 0;

    friend bool operator==(const Rgb&, const Rgb&) = default;
};

/// Colored point cloud in the sensor frame. Instance ids are only present on
/// synthetic data (0 = background, i = i-th ground-truth box, 1-based).
struct PointCloud {
    std::vector<Vec3> positions;
    std::vector<Rgb> colors;
    std::optional<std::vector<std::uint32_t>> instance_ids;

    std::size_t size() const noexcept { return positions.size(); }
    bool empty() const noexcept { return positions.empty(); }

    void validate() const {
        if (colors.size() != positions.size()) {
            fail(ErrorKind::InvalidArgument, "point cloud colors/positions length mismatch");
        }
        if (instance_ids && instance_ids->size() != positions.size()) {
            fail(ErrorKind::InvalidArgument, "point cloud instance ids length mismatch");
        }
        for (const auto& p : positions) {
            if (!p.allFinite()) fail(ErrorKind::InvalidArgument, "point cloud has non-finite position");
        }
    }
};

struct CameraIntrinsics {
    double fx = 525.0;
    double fy = 525.0;
    double cx = 319.5;
    double cy = 239.5;
    int width = 640;
    int height = 480;

    void validate() const {
        if (!(fx > 0.0 && fy > 0.0)) fail(ErrorKind::InvalidArgument, "focal lengths must be positive");
        if (width <= 0 || height <= 0) fail(ErrorKind::InvalidArgument, "image size must be positive");
    }

    /// Pinhole projection; caller guarantees p.z() > 0.
    Eigen::Vector2d project(const Vec3& p) const {
        return {fx * p.x() / p.z() + cx, fy * p.y() / p.z() + cy};
    }
};

inline bool is_rotation(const Mat3& r, double tol = kRotationTolerance) {
    if (!r.allFinite()) return false;
    const double ortho = (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff();
    return ortho <= tol && std::abs(r.determinant() - 1.0) <= tol;
}

/// Proper rigid motion x -> R x + t. Rotations failing the orthonormality
/// check are rejected at construction.
class RigidTransform {
public:
    RigidTransform() = default;

    RigidTransform(const Mat3& rotation, const Vec3& translation)
        : rotation_(rotation), translation_(translation) {
        if (!is_rotation(rotation_)) fail(ErrorKind::InvalidArgument, "rotation is not orthonormal with det +1");
        if (!translation_.allFinite()) fail(ErrorKind::InvalidArgument, "translation is not finite");
    }

    static RigidTransform identity() { return {}; }
    static RigidTransform translation(const Vec3& t) { return {Mat3::Identity(), t}; }

    const Mat3& rotation() const noexcept { return rotation_; }
    const Vec3& translation() const noexcept { return translation_; }

    Vec3 apply(const Vec3& p) const { return rotation_ * p + translation_; }

    RigidTransform inverse() const {
        RigidTransform inv;
        inv.rotation_ = rotation_.transpose();
        inv.translation_ = -(inv.rotation_ * translation_);
        return inv;
    }

    Mat4 matrix() const {
        Mat4 m = Mat4::Identity();
        m.topLeftCorner<3, 3>() = rotation_;
        m.topRightCorner<3, 1>() = translation_;
        return m;
    }

    /// Result applies `inner` first, then `outer`.
    friend RigidTransform compose(const RigidTransform& outer, const RigidTransform& inner) {
        RigidTransform out;
        out.rotation_ = outer.rotation_ * inner.rotation_;
        out.translation_ = outer.rotation_ * inner.translation_ + outer.translation_;
        return out;
    }

private:
    Mat3 rotation_ = Mat3::Identity();
    Vec3 translation_ = Vec3::Zero();
};

/// Right-handed orthonormal projection axes, stored as matrix columns.
class AxesTriad {
public:
    AxesTriad() = default;

    AxesTriad(const Vec3& a1, const Vec3& a2, const Vec3& a3) {
        m_.col(0) = a1;
        m_.col(1) = a2;
        m_.col(2) = a3;
        check();
    }

    explicit AxesTriad(const Mat3& columns) : m_(columns) { check(); }

    static AxesTriad identity() { return {}; }

    Vec3 a1() const { return m_.col(0); }
    Vec3 a2() const { return m_.col(1); }
    Vec3 a3() const { return m_.col(2); }
    const Mat3& matrix() const noexcept { return m_; }

private:
    void check() const {
        constexpr double tol = kRotationTolerance;
        if (!m_.allFinite()) fail(ErrorKind::InvalidArgument, "axes not finite");
        for (int i = 0; i < 3; ++i) {
            if (std::abs(m_.col(i).norm() - 1.0) > tol) fail(ErrorKind::InvalidArgument, "axis is not unit length");
        }
        if (std::abs(m_.col(0).dot(m_.col(1))) > tol || std::abs(m_.col(0).dot(m_.col(2))) > tol ||
            std::abs(m_.col(1).dot(m_.col(2))) > tol) {
            fail(ErrorKind::InvalidArgument, "axes are not orthogonal");
        }
        if ((m_.col(0).cross(m_.col(1)) - m_.col(2)).cwiseAbs().maxCoeff() > tol) {
            fail(ErrorKind::InvalidArgument, "axes are not right-handed");
        }
    }

    Mat3 m_ = Mat3::Identity();
};

/// Oriented cuboid: `pose` maps box-local coordinates (centered, axis-aligned)
/// into the sensor frame; `extent` holds full side lengths.
struct OrientedBox3D {
    RigidTransform pose;
    Vec3 extent = Vec3::Ones();
    std::string class_label;
    double score = 1.0;
    bool converged = false;
    int steps = 0;

    Vec3 center() const { return pose.translation(); }
    double volume() const { return extent.prod(); }

    void validate() const {
        if (!extent.allFinite() || (extent.array() <= 0.0).any()) {
            fail(ErrorKind::InvalidArgument, "box extent components must be positive");
        }
    }

    /// Box-local coordinates of a sensor-frame point.
    Vec3 to_local(const Vec3& p) const { return pose.rotation().transpose() * (p - pose.translation()); }

    bool contains(const Vec3& p, double tol = 0.0) const {
        const Vec3 local = to_local(p).cwiseAbs();
        return (local.array() <= (extent.array() * 0.5 + tol)).all();
    }
};

/// Sign pattern of corner j in binary order (x is the most significant bit).
inline Vec3 corner_signs(int j) {
    return {(j & 4) ? 1.0 : -1.0, (j & 2) ? 1.0 : -1.0, (j & 1) ? 1.0 : -1.0};
}

/// 4x8 homogeneous corner matrix; column j is corner j in binary sign order.
inline CornerMatrix box_to_corners(const OrientedBox3D& box) {
    CornerMatrix corners;
    const Vec3 half = box.extent * 0.5;
    for (int j = 0; j < 8; ++j) {
        const Vec3 local = corner_signs(j).cwiseProduct(half);
        corners.block<3, 1>(0, j) = box.pose.apply(local);
        corners(3, j) = 1.0;
    }
    return corners;
}

inline RigidTransform accumulate(std::span<const RigidTransform> chain) {
    RigidTransform total;
    for (const auto& t : chain) total = compose(total, t);
    return total;
}

/// Maps a box expressed in the innermost frame of `chain` (T_0^1 ... T_{N-1}^N)
/// back into the outermost frame: B_o = T_0^1 ... T_{N-1}^N B_N.
inline OrientedBox3D chain_to_origin(const OrientedBox3D& box, std::span<const RigidTransform> chain) {
    OrientedBox3D out = box;
    out.pose = compose(accumulate(chain), box.pose);
    return out;
}

inline OrientedBox3D transformed(const OrientedBox3D& box, const RigidTransform& t) {
    OrientedBox3D out = box;
    out.pose = compose(t, box.pose);
    return out;
}

/// Lexicographic order on box centers, used for deterministic tie-breaks.
inline bool center_less(const OrientedBox3D& a, const OrientedBox3D& b) {
    const Vec3 ca = a.center();
    const Vec3 cb = b.center();
    for (int i = 0; i < 3; ++i) {
        if (ca[i] != cb[i]) return ca[i] < cb[i];
    }
    return false;
}

}  // namespace rcv
