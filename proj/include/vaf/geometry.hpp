#pragma once

#include <array>
#include <cmath>

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <json.hpp>

namespace vaf {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;

/// Right-handed orthonormal basis (t1, t2, n) with n = normalize(normal).
inline Mat3 tangent_frame(const Vec3& normal) {
    const Vec3 n = normal.normalized();
    const Vec3 helper = std::abs(n.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
    const Vec3 t1 = helper.cross(n).normalized();
    const Vec3 t2 = n.cross(t1);
    Mat3 frame;
    frame.col(0) = t1;
    frame.col(1) = t2;
    frame.col(2) = n;
    return frame;
}

inline nlohmann::json to_json_array(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

inline Vec3 vec3_from_json(const nlohmann::json& j) {
    return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}

/// Quaternions serialize as [w, x, y, z].
inline nlohmann::json to_json_array(const Quat& q) { return {q.w(), q.x(), q.y(), q.z()}; }

inline Quat quat_from_json(const nlohmann::json& j) {
    return Quat(j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>(), j.at(3).get<double>());
}

inline nlohmann::json to_json_array(const Mat3& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (int r = 0; r < 3; ++r) rows.push_back({m(r, 0), m(r, 1), m(r, 2)});
    return rows;
}

inline Mat3 mat3_from_json(const nlohmann::json& j) {
    Mat3 m;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) m(r, c) = j.at(r).at(c).get<double>();
    return m;
}

} // namespace vaf
