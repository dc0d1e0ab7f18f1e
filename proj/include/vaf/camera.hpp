#pragma once

#include <cmath>
#include <optional>

#include <json.hpp>

#include "vaf/error.hpp"
#include "vaf/geometry.hpp"

namespace vaf {

/// Pinhole camera. x_cam = rotation * x_world + translation; the camera looks
/// along +z, image x to the right, image y down. Pixel centers lie on integer
/// coordinates.
struct Camera {
    double fx = 64.0;
    double fy = 64.0;
    double cx = 31.5;
    double cy = 31.5;
    int width = 64;
    int height = 64;
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();

    void validate() const {
        if (!(fx > 0.0 && fy > 0.0)) throw ArgumentError("camera focal lengths must be positive");
        if (width < 1 || height < 1) throw ArgumentError("camera image size must be positive");
        if (!(cx >= 0.0 && cx < width && cy >= 0.0 && cy < height))
            throw ArgumentError("camera principal point outside the image");
        const double ortho = (rotation * rotation.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff();
        if (ortho > 1e-6 || rotation.determinant() < 0.0) throw ArgumentError("camera rotation is not orthonormal");
    }

    Vec3 to_camera(const Vec3& world) const { return rotation * world + translation; }
    Vec3 to_world(const Vec3& cam) const { return rotation.transpose() * (cam - translation); }
    Vec3 center() const { return -(rotation.transpose() * translation); }

    /// (u, v, depth) or nothing when the point is not in front of the camera.
    std::optional<Vec3> project(const Vec3& world) const {
        const Vec3 c = to_camera(world);
        if (c.z() <= 0.0) return std::nullopt;
        return Vec3(fx * c.x() / c.z() + cx, fy * c.y() / c.z() + cy, c.z());
    }

    /// World-space direction (not normalized) through a pixel.
    Vec3 ray_direction(double u, double v) const {
        return rotation.transpose() * Vec3((u - cx) / fx, (v - cy) / fy, 1.0);
    }

    bool in_image(double u, double v, double margin = 0.0) const {
        return u >= margin && v >= margin && u <= width - 1 - margin && v <= height - 1 - margin;
    }

    /// Camera at `eye` looking at `target`; `up` fixes roll (image y points away from it).
    static Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up = Vec3::UnitZ(), double focal = 64.0,
                          int size = 64) {
        const Vec3 forward = (target - eye).normalized();
        Vec3 right = forward.cross(up);
        if (right.norm() < 1e-6) right = forward.cross(Vec3::UnitY());
        right.normalize();
        const Vec3 down = forward.cross(right);
        Camera cam;
        cam.fx = cam.fy = focal;
        cam.width = cam.height = size;
        cam.cx = cam.cy = 0.5 * (size - 1);
        cam.rotation.row(0) = right.transpose();
        cam.rotation.row(1) = down.transpose();
        cam.rotation.row(2) = forward.transpose();
        cam.translation = -(cam.rotation * eye);
        return cam;
    }
};

inline nlohmann::json to_json(const Camera& c) {
    return {{"fx", c.fx},       {"fy", c.fy},         {"cx", c.cx},
            {"cy", c.cy},       {"width", c.width},   {"height", c.height},
            {"rotation", to_json_array(c.rotation)}, {"translation", to_json_array(c.translation)}};
}

inline Camera camera_from_json(const nlohmann::json& j) {
    Camera c;
    c.fx = j.at("fx").get<double>();
    c.fy = j.at("fy").get<double>();
    c.cx = j.at("cx").get<double>();
    c.cy = j.at("cy").get<double>();
    c.width = j.at("width").get<int>();
    c.height = j.at("height").get<int>();
    c.rotation = mat3_from_json(j.at("rotation"));
    c.translation = vec3_from_json(j.at("translation"));
    c.validate();
    return c;
}

} // namespace vaf
