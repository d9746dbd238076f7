#pragma once

#include <Eigen/SVD>
#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

#include "rcv/error.hpp"
#include "rcv/geometry.hpp"
#include "rcv/image.hpp"

namespace rcv::io {

using nlohmann::json;

inline json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

inline Vec3 vec_from_json(const json& j, const char* what) {
    if (!j.is_array() || j.size() != 3) fail(ErrorKind::InvalidArgument, std::string(what) + " must be an array of 3 numbers");
    return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}

/// Box schema shared by every tool: center, row-major rotation, full extents
/// and the 8 corners in binary sign order.
inline json box_to_json(const OrientedBox3D& box) {
    json rotation = json::array();
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) rotation.push_back(box.pose.rotation()(r, c));
    }
    json corners = json::array();
    const CornerMatrix m = box_to_corners(box);
    for (int j = 0; j < 8; ++j) corners.push_back(json::array({m(0, j), m(1, j), m(2, j)}));
    return {{"class", box.class_label},
            {"score", box.score},
            {"center", vec_json(box.center())},
            {"rotation", rotation},
            {"extent", vec_json(box.extent)},
            {"corners", corners},
            {"converged", box.converged},
            {"steps", box.steps}};
}

/// Rotations that miss the strict check but are orthonormal to 1e-6 (e.g. hand
/// written files) are projected back onto SO(3).
inline Mat3 rotation_from_rows(const json& j) {
    if (!j.is_array() || j.size() != 9) fail(ErrorKind::InvalidArgument, "rotation must be an array of 9 numbers");
    Mat3 r;
    for (int i = 0; i < 9; ++i) r(i / 3, i % 3) = j.at(static_cast<std::size_t>(i)).get<double>();
    if (is_rotation(r)) return r;
    if (!is_rotation(r, 1e-6)) fail(ErrorKind::InvalidArgument, "rotation is not orthonormal");
    Eigen::JacobiSVD<Mat3> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
    return svd.matrixU() * svd.matrixV().transpose();
}

inline OrientedBox3D box_from_json(const json& j) {
    try {
        OrientedBox3D box;
        box.class_label = j.at("class").get<std::string>();
        box.score = j.at("score").get<double>();
        box.pose = RigidTransform(rotation_from_rows(j.at("rotation")), vec_from_json(j.at("center"), "center"));
        box.extent = vec_from_json(j.at("extent"), "extent");
        box.converged = j.value("converged", false);
        box.steps = j.value("steps", 0);
        box.validate();
        return box;
    } catch (const json::exception& e) {
        fail(ErrorKind::InvalidArgument, std::string("malformed box json: ") + e.what());
    }
}

inline json boxes_to_json(const std::vector<OrientedBox3D>& boxes) {
    json arr = json::array();
    for (const auto& b : boxes) arr.push_back(box_to_json(b));
    return arr;
}

inline std::vector<OrientedBox3D> boxes_from_json(const json& j) {
    if (!j.is_array()) fail(ErrorKind::InvalidArgument, "boxes json must be an array");
    std::vector<OrientedBox3D> out;
    for (const auto& item : j) out.push_back(box_from_json(item));
    return out;
}

inline json rect_json(const PixelRect& r) { return json::array({r.u0, r.v0, r.u1, r.v1}); }

inline PixelRect rect_from_json(const json& j) {
    if (!j.is_array() || j.size() != 4) fail(ErrorKind::InvalidArgument, "rect must be [u0,v0,u1,v1]");
    for (const auto& x : j) {
        if (!x.is_number()) fail(ErrorKind::InvalidArgument, "rect entries must be numbers");
    }
    PixelRect r{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
    if (!r.valid()) fail(ErrorKind::InvalidArgument, "rect must satisfy u0<u1 and v0<v1");
    return r;
}

inline json detection_to_json(const Detection2D& d) {
    return {{"class", d.class_label}, {"score", d.score}, {"rect", rect_json(d.rect)}};
}

inline Detection2D detection_from_json(const json& j) {
    Detection2D d;
    d.class_label = j.at("class").get<std::string>();
    d.score = j.at("score").get<double>();
    d.rect = rect_from_json(j.at("rect"));
    return d;
}

inline json intrinsics_to_json(const CameraIntrinsics& k) {
    return {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"width", k.width}, {"height", k.height}};
}

inline CameraIntrinsics intrinsics_from_json(const json& j) {
    CameraIntrinsics k;
    k.fx = j.at("fx").get<double>();
    k.fy = j.at("fy").get<double>();
    k.cx = j.at("cx").get<double>();
    k.cy = j.at("cy").get<double>();
    k.width = j.at("width").get<int>();
    k.height = j.at("height").get<int>();
    k.validate();
    return k;
}

/// Pretty-printed form used for every file the tools write.
inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

}  // namespace rcv::io
