#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vaf/error.hpp"
#include "vaf/geometry.hpp"
#include "vaf/rng.hpp"

namespace vaf {

inline constexpr int kModesPerMaterial = 4;
inline constexpr int kFeatureDim = 32;
inline constexpr int kLevelCount = 3;
inline constexpr int kNullId = -1;

// ---------------------------------------------------------------------------
// Materials

struct Mode {
    double frequency = 0.0; // Hz
    double damping = 0.0;   // 1/s
    double amplitude = 0.0;
};

struct MaterialModal {
    int material_id = 0;
    std::vector<Mode> modes;
    std::string name;

    void validate() const {
        if (modes.empty()) throw ArgumentError("material '" + name + "' has no modes");
        for (std::size_t k = 0; k < modes.size(); ++k) {
            const Mode& m = modes[k];
            if (!(m.amplitude > 0.0)) throw ArgumentError("material '" + name + "': amplitudes must be > 0");
            if (!(m.frequency > 0.0) || !(m.damping >= 0.0))
                throw ArgumentError("material '" + name + "': invalid mode frequency/damping");
            if (k > 0 && !(m.frequency > modes[k - 1].frequency))
                throw ArgumentError("material '" + name + "': frequencies must be strictly increasing");
        }
    }
};

/// Appearance used when baking Gaussian colors. Not part of the acoustic oracle.
struct MaterialAppearance {
    std::array<double, 3> base_color{};
    double texture_jitter = 0.0;
};

struct PaletteEntry {
    MaterialModal modal;
    MaterialAppearance appearance;
};

namespace detail {
inline PaletteEntry palette_entry(int id, const char* name, double f1, std::array<double, 4> ratios,
                                  std::array<double, 4> damping, std::array<double, 4> amplitude,
                                  std::array<double, 3> color, double jitter) {
    PaletteEntry e;
    e.modal.material_id = id;
    e.modal.name = name;
    for (int k = 0; k < kModesPerMaterial; ++k) e.modal.modes.push_back({f1 * ratios[k], damping[k], amplitude[k]});
    e.appearance = {color, jitter};
    return e;
}
} // namespace detail

/// The shipped material table: 8 materials, 4 modes each, sorted by first-mode
/// frequency. Adjacent first modes are >= 1.4x apart.
inline const std::vector<PaletteEntry>& reference_palette() {
    static const std::vector<PaletteEntry> palette = {
        detail::palette_entry(0, "cardboard", 180.0, {1.0, 2.35, 3.9, 5.8}, {70, 74, 77, 80}, {1.0, 0.55, 0.35, 0.2},
                              {0.66, 0.52, 0.34}, 0.05),
        detail::palette_entry(1, "wood", 260.0, {1.0, 2.6, 4.3, 6.9}, {32, 38, 45, 52}, {1.0, 0.6, 0.4, 0.25},
                              {0.42, 0.26, 0.12}, 0.12),
        detail::palette_entry(2, "plastic", 370.0, {1.0, 2.2, 3.7, 5.4}, {22, 26, 31, 36}, {1.0, 0.5, 0.35, 0.2},
                              {0.16, 0.42, 0.78}, 0.03),
        detail::palette_entry(3, "stone", 520.0, {1.0, 2.45, 4.1, 6.2}, {14, 17, 21, 25}, {1.0, 0.65, 0.45, 0.3},
                              {0.48, 0.47, 0.44}, 0.10),
        detail::palette_entry(4, "ceramic", 740.0, {1.0, 2.3, 3.6, 5.9}, {8, 10, 12, 15}, {1.0, 0.7, 0.5, 0.3},
                              {0.93, 0.91, 0.86}, 0.02),
        detail::palette_entry(5, "lcd", 1050.0, {1.0, 1.9, 3.1, 4.6}, {18, 22, 27, 33}, {0.9, 0.6, 0.4, 0.3},
                              {0.07, 0.08, 0.10}, 0.02),
        detail::palette_entry(6, "glass", 1500.0, {1.0, 1.8, 2.7, 3.8}, {5, 6, 7.5, 9}, {1.0, 0.6, 0.45, 0.3},
                              {0.50, 0.78, 0.72}, 0.04),
        detail::palette_entry(7, "metal", 2150.0, {1.0, 1.6, 2.2, 2.75}, {2, 2.5, 3.2, 4}, {1.0, 0.7, 0.5, 0.4},
                              {0.72, 0.74, 0.78}, 0.04),
    };
    return palette;
}

inline const PaletteEntry& palette_material(int material_id) {
    const auto& p = reference_palette();
    if (material_id < 0 || material_id >= static_cast<int>(p.size()))
        throw ArgumentError("unknown material id " + std::to_string(material_id));
    return p[static_cast<std::size_t>(material_id)];
}

// ---------------------------------------------------------------------------
// Labels and Gaussians

/// Segmentation level, finest to coarsest.
enum class Level : int { subpart = 0, part = 1, whole = 2 };

inline const char* level_name(Level level) {
    switch (level) {
    case Level::subpart: return "s";
    case Level::part: return "p";
    case Level::whole: return "w";
    }
    return "?";
}

inline Level level_from_name(const std::string& name) {
    if (name == "s" || name == "subpart") return Level::subpart;
    if (name == "p" || name == "part") return Level::part;
    if (name == "w" || name == "whole") return Level::whole;
    throw ConfigError("unknown segmentation level '" + name + "'");
}

struct Labels {
    int instance_id = kNullId;
    int part_id = kNullId;
    int subpart_id = kNullId;
    int material_id = kNullId;

    int id(Level level) const {
        switch (level) {
        case Level::subpart: return subpart_id;
        case Level::part: return part_id;
        case Level::whole: return instance_id;
        }
        return kNullId;
    }

    friend bool operator==(const Labels&, const Labels&) = default;
};

using Feature = Eigen::Matrix<double, kFeatureDim, 1, Eigen::DontAlign>;

struct Gaussian3D {
    Vec3 mean = Vec3::Zero();
    Vec3 scale = Vec3::Constant(0.01);
    Quat rotation = Quat::Identity();
    double opacity = 1.0;
    std::array<double, 3> color{};
    std::array<Feature, kLevelCount> features{Feature::Zero(), Feature::Zero(), Feature::Zero()};
    Labels labels;

    void validate() const {
        if (std::abs(rotation.norm() - 1.0) > 1e-6) throw ArgumentError("gaussian rotation must be a unit quaternion");
        if (!(scale.minCoeff() > 0.0)) throw ArgumentError("gaussian scales must be positive");
        if (!(opacity > 0.0 && opacity <= 1.0)) throw ArgumentError("gaussian opacity must lie in (0, 1]");
    }

    /// World-space covariance R S^2 R^T.
    Mat3 covariance() const {
        const Mat3 r = rotation.toRotationMatrix();
        return r * scale.cwiseAbs2().asDiagonal() * r.transpose();
    }
};

// ---------------------------------------------------------------------------
// Analytic primitives

enum class PrimitiveKind { plane, box, sphere };

inline const char* primitive_kind_name(PrimitiveKind k) {
    switch (k) {
    case PrimitiveKind::plane: return "plane";
    case PrimitiveKind::box: return "box";
    case PrimitiveKind::sphere: return "sphere";
    }
    return "?";
}

inline PrimitiveKind primitive_kind_from_name(const std::string& s) {
    if (s == "plane") return PrimitiveKind::plane;
    if (s == "box") return PrimitiveKind::box;
    if (s == "sphere") return PrimitiveKind::sphere;
    throw ConfigError("unknown primitive kind '" + s + "'");
}

/// A labeled surface. Planes are finite two-sided rectangles in the local
/// xy-plane (half_extents.z unused); spheres use half_extents.x as radius.
///
/// Label hierarchy: sphere = 1 part / 1 subpart; plane = 1 part / 2 subparts
/// (split by local x sign); box = 3 parts (one per axis-aligned face pair) /
/// 6 subparts (faces).
struct Primitive {
    PrimitiveKind kind = PrimitiveKind::sphere;
    Vec3 center = Vec3::Zero();
    Quat rotation = Quat::Identity();
    Vec3 half_extents = Vec3::Constant(0.5);
    int instance_id = 0;
    int material_id = 0;
    int first_part_id = 0;
    int first_subpart_id = 0;

    int part_count() const { return kind == PrimitiveKind::box ? 3 : 1; }
    int subpart_count() const {
        switch (kind) {
        case PrimitiveKind::sphere: return 1;
        case PrimitiveKind::plane: return 2;
        case PrimitiveKind::box: return 6;
        }
        return 1;
    }

    Mat3 rotation_matrix() const { return rotation.toRotationMatrix(); }
    Vec3 to_local(const Vec3& p) const { return rotation_matrix().transpose() * (p - center); }
    Vec3 to_world(const Vec3& q) const { return rotation_matrix() * q + center; }

    double surface_area() const {
        const Vec3& h = half_extents;
        switch (kind) {
        case PrimitiveKind::sphere: return 4.0 * std::numbers::pi * h.x() * h.x();
        case PrimitiveKind::plane: return 4.0 * h.x() * h.y();
        case PrimitiveKind::box: return 8.0 * (h.x() * h.y() + h.y() * h.z() + h.x() * h.z());
        }
        return 0.0;
    }

    /// Unsigned distance from p to the surface.
    double distance_to_surface(const Vec3& p) const {
        const Vec3 q = to_local(p);
        const Vec3& h = half_extents;
        switch (kind) {
        case PrimitiveKind::sphere: return std::abs(q.norm() - h.x());
        case PrimitiveKind::plane: {
            const double du = std::max(std::abs(q.x()) - h.x(), 0.0);
            const double dv = std::max(std::abs(q.y()) - h.y(), 0.0);
            return std::sqrt(du * du + dv * dv + q.z() * q.z());
        }
        case PrimitiveKind::box: {
            const Vec3 d = q.cwiseAbs() - h;
            const double outside = d.cwiseMax(0.0).norm();
            const double inside = std::min(d.maxCoeff(), 0.0);
            return std::abs(outside + inside);
        }
        }
        return 0.0;
    }

    /// Nearest positive ray parameter of a hit, if any. `dir` need not be unit.
    std::optional<double> intersect(const Vec3& origin, const Vec3& dir, double t_min = 1e-9) const {
        const Mat3 rt = rotation_matrix().transpose();
        const Vec3 o = rt * (origin - center);
        const Vec3 d = rt * dir;
        const Vec3& h = half_extents;
        switch (kind) {
        case PrimitiveKind::sphere: {
            const double a = d.squaredNorm();
            const double b = o.dot(d);
            const double c = o.squaredNorm() - h.x() * h.x();
            const double disc = b * b - a * c;
            if (disc < 0.0) return std::nullopt;
            const double s = std::sqrt(disc);
            const double t0 = (-b - s) / a;
            const double t1 = (-b + s) / a;
            if (t0 > t_min) return t0;
            if (t1 > t_min) return t1;
            return std::nullopt;
        }
        case PrimitiveKind::plane: {
            if (std::abs(d.z()) < 1e-15) return std::nullopt;
            const double t = -o.z() / d.z();
            if (t <= t_min) return std::nullopt;
            const Vec3 p = o + t * d;
            if (std::abs(p.x()) > h.x() || std::abs(p.y()) > h.y()) return std::nullopt;
            return t;
        }
        case PrimitiveKind::box: {
            double t_near = -std::numeric_limits<double>::infinity();
            double t_far = std::numeric_limits<double>::infinity();
            for (int a = 0; a < 3; ++a) {
                if (std::abs(d[a]) < 1e-15) {
                    if (std::abs(o[a]) > h[a]) return std::nullopt;
                    continue;
                }
                double ta = (-h[a] - o[a]) / d[a];
                double tb = (h[a] - o[a]) / d[a];
                if (ta > tb) std::swap(ta, tb);
                t_near = std::max(t_near, ta);
                t_far = std::min(t_far, tb);
            }
            if (t_near > t_far) return std::nullopt;
            if (t_near > t_min) return t_near;
            if (t_far > t_min) return t_far;
            return std::nullopt;
        }
        }
        return std::nullopt;
    }

    /// Outward normal at a surface point (plane: local +z).
    Vec3 normal_at(const Vec3& p) const {
        const Vec3 q = to_local(p);
        Vec3 n_local = Vec3::UnitZ();
        switch (kind) {
        case PrimitiveKind::sphere: n_local = q.normalized(); break;
        case PrimitiveKind::plane: n_local = Vec3::UnitZ(); break;
        case PrimitiveKind::box: {
            const Vec3 ratio = q.cwiseAbs().cwiseQuotient(half_extents);
            int axis = 0;
            ratio.maxCoeff(&axis);
            n_local = Vec3::Zero();
            n_local[axis] = q[axis] >= 0.0 ? 1.0 : -1.0;
            break;
        }
        }
        return rotation_matrix() * n_local;
    }

    /// Part and subpart ids of the surface region containing p.
    std::pair<int, int> region_at(const Vec3& p) const {
        const Vec3 q = to_local(p);
        switch (kind) {
        case PrimitiveKind::sphere: return {first_part_id, first_subpart_id};
        case PrimitiveKind::plane: return {first_part_id, first_subpart_id + (q.x() >= 0.0 ? 1 : 0)};
        case PrimitiveKind::box: {
            const Vec3 ratio = q.cwiseAbs().cwiseQuotient(half_extents);
            int axis = 0;
            ratio.maxCoeff(&axis);
            const int face = 2 * axis + (q[axis] >= 0.0 ? 1 : 0);
            return {first_part_id + axis, first_subpart_id + face};
        }
        }
        return {first_part_id, first_subpart_id};
    }

    Labels labels_at(const Vec3& p) const {
        const auto [part, subpart] = region_at(p);
        return {instance_id, part, subpart, material_id};
    }

    /// Area-uniform surface sample.
    Vec3 sample_surface(Rng& rng) const {
        const Vec3& h = half_extents;
        Vec3 q;
        switch (kind) {
        case PrimitiveKind::sphere: {
            const double z = rng.uniform(-1.0, 1.0);
            const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
            const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
            q = h.x() * Vec3(r * std::cos(phi), r * std::sin(phi), z);
            break;
        }
        case PrimitiveKind::plane:
            q = Vec3(rng.uniform(-h.x(), h.x()), rng.uniform(-h.y(), h.y()), 0.0);
            break;
        case PrimitiveKind::box: {
            const std::array<double, 3> face_area{h.y() * h.z(), h.x() * h.z(), h.x() * h.y()};
            const double total = face_area[0] + face_area[1] + face_area[2];
            double pick = rng.uniform(0.0, total);
            int axis = 0;
            while (axis < 2 && pick >= face_area[static_cast<std::size_t>(axis)]) {
                pick -= face_area[static_cast<std::size_t>(axis)];
                ++axis;
            }
            const double sign = rng.bernoulli(0.5) ? 1.0 : -1.0;
            for (int a = 0; a < 3; ++a) q[a] = rng.uniform(-h[a], h[a]);
            q[axis] = sign * h[axis];
            break;
        }
        }
        return to_world(q);
    }
};

// ---------------------------------------------------------------------------
// Scene

struct ObjectSpec {
    PrimitiveKind kind = PrimitiveKind::sphere;
    Vec3 center = Vec3::Zero();
    Vec3 half_extents = Vec3::Constant(0.5);
    Quat rotation = Quat::Identity();
    /// Index into the active palette (not a material id).
    int material_slot = 0;
};

struct SceneConfig {
    int object_count = 8;
    int palette_size = 8;
    int gaussians_per_object = 400;
    int max_impacts = 10000;
    double layout_radius = 1.2;
    double opacity = 0.9;
    /// Explicit objects; when non-empty they replace procedural placement.
    std::vector<ObjectSpec> objects;

    void validate() const {
        const int count = objects.empty() ? object_count : static_cast<int>(objects.size());
        if (count < 1) throw ConfigError("scene needs at least one object");
        if (palette_size < 1) throw ConfigError("scene palette must not be empty");
        if (palette_size > static_cast<int>(reference_palette().size()))
            throw ConfigError("palette_size exceeds the shipped material table");
        if (gaussians_per_object < 1) throw ConfigError("gaussians_per_object must be >= 1");
        if (max_impacts < 1) throw ConfigError("max_impacts must be >= 1");
        if (!(opacity > 0.0 && opacity <= 1.0)) throw ConfigError("opacity must lie in (0, 1]");
        for (const auto& o : objects)
            if (o.material_slot < 0 || o.material_slot >= palette_size)
                throw ConfigError("object material_slot outside the palette");
    }
};

struct Scene {
    std::vector<Gaussian3D> gaussians;
    std::map<int, MaterialModal> materials;
    std::vector<Primitive> primitives;
    int max_impacts = 10000;

    /// Checks that every label referenced by a Gaussian exists.
    void validate() const {
        for (const auto& g : gaussians) {
            g.validate();
            if (!materials.contains(g.labels.material_id)) throw ContractError("gaussian references unknown material");
            if (g.labels.instance_id < 0 || g.labels.instance_id >= static_cast<int>(primitives.size()))
                throw ContractError("gaussian references unknown instance");
        }
        for (const auto& p : primitives)
            if (!materials.contains(p.material_id)) throw ContractError("primitive references unknown material");
    }

    const Primitive& primitive(int instance_id) const { return primitives.at(static_cast<std::size_t>(instance_id)); }
};

namespace detail {

/// Palette materials spread evenly over the shipped table.
inline std::vector<int> active_palette(int palette_size) {
    const int total = static_cast<int>(reference_palette().size());
    std::vector<int> ids;
    if (palette_size == 1) return {0};
    for (int i = 0; i < palette_size; ++i)
        ids.push_back(static_cast<int>(std::lround(static_cast<double>(i) * (total - 1) / (palette_size - 1))));
    return ids;
}

inline Quat random_rotation(Rng& rng) {
    Quat q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    q.normalize();
    return q;
}

inline std::vector<ObjectSpec> procedural_objects(const SceneConfig& cfg, Rng& rng) {
    std::vector<ObjectSpec> out;
    const int n = cfg.object_count;
    const double radius = n == 1 ? 0.0 : cfg.layout_radius;
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    std::vector<int> slots(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) slots[static_cast<std::size_t>(i)] = i % cfg.palette_size;
    rng.shuffle(slots);
    for (int i = 0; i < n; ++i) {
        ObjectSpec o;
        const double angle = phase + 2.0 * std::numbers::pi * i / n;
        o.center = Vec3(radius * std::cos(angle), radius * std::sin(angle), rng.uniform(-0.25, 0.25));
        const auto kind = rng.below(3);
        if (kind == 0) {
            o.kind = PrimitiveKind::sphere;
            const double r = rng.uniform(0.28, 0.36);
            o.half_extents = Vec3::Constant(r);
        } else if (kind == 1) {
            o.kind = PrimitiveKind::box;
            o.half_extents = Vec3(rng.uniform(0.18, 0.27), rng.uniform(0.18, 0.27), rng.uniform(0.18, 0.27));
        } else {
            o.kind = PrimitiveKind::plane;
            o.half_extents = Vec3(rng.uniform(0.28, 0.36), rng.uniform(0.24, 0.32), 0.0);
        }
        o.rotation = random_rotation(rng);
        o.material_slot = slots[static_cast<std::size_t>(i)];
        out.push_back(o);
    }
    return out;
}

} // namespace detail

inline std::array<double, 3> shade_color(const MaterialAppearance& look, const Vec3& normal, Rng& rng) {
    static const Vec3 light = Vec3(0.4, -0.3, 0.85).normalized();
    const double shade = 0.6 + 0.4 * std::abs(normal.dot(light));
    const double grain = 1.0 + look.texture_jitter * rng.normal();
    std::array<double, 3> c{};
    for (std::size_t k = 0; k < 3; ++k) c[k] = std::clamp(look.base_color[k] * shade * grain, 0.0, 1.0);
    return c;
}

/// Procedural scene. Deterministic in (config, seed).
inline Scene build_scene(const SceneConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(derive_seed(seed, 0x5ce4e));
    const std::vector<int> palette = detail::active_palette(config.palette_size);
    const std::vector<ObjectSpec> specs = config.objects.empty() ? detail::procedural_objects(config, rng) : config.objects;

    Scene scene;
    scene.max_impacts = config.max_impacts;
    int next_part = 0;
    int next_subpart = 0;
    for (std::size_t i = 0; i < specs.size(); ++i) {
        const ObjectSpec& spec = specs[i];
        Primitive prim;
        prim.kind = spec.kind;
        prim.center = spec.center;
        prim.rotation = spec.rotation.normalized();
        prim.half_extents = spec.half_extents;
        if (prim.kind == PrimitiveKind::sphere) prim.half_extents = Vec3::Constant(spec.half_extents.x());
        prim.instance_id = static_cast<int>(i);
        prim.material_id = palette[static_cast<std::size_t>(spec.material_slot)];
        prim.first_part_id = next_part;
        prim.first_subpart_id = next_subpart;
        next_part += prim.part_count();
        next_subpart += prim.subpart_count();
        scene.primitives.push_back(prim);
        scene.materials.emplace(prim.material_id, palette_material(prim.material_id).modal);
    }

    for (const Primitive& prim : scene.primitives) {
        const int n = config.gaussians_per_object;
        const double tangent_scale = 0.7 * std::sqrt(prim.surface_area() / n);
        const MaterialAppearance& look = palette_material(prim.material_id).appearance;
        for (int k = 0; k < n; ++k) {
            Gaussian3D g;
            g.mean = prim.sample_surface(rng);
            const Vec3 normal = prim.normal_at(g.mean);
            // Thin shell: normal-axis scale is 10% of the tangent scales.
            g.scale = Vec3(tangent_scale, tangent_scale, 0.1 * tangent_scale);
            g.rotation = Quat(tangent_frame(normal)).normalized();
            g.opacity = config.opacity;
            g.color = shade_color(look, normal, rng);
            g.labels = prim.labels_at(g.mean);
            scene.gaussians.push_back(g);
        }
    }
    scene.validate();
    return scene;
}

struct ImpactSample {
    Vec3 point = Vec3::Zero();
    Vec3 normal = Vec3::UnitZ();
    Labels labels;
};

/// Material-stratified impact points on primitive surfaces.
inline std::vector<ImpactSample> sample_impacts(const Scene& scene, int n, std::uint64_t seed) {
    if (n < 1) throw ArgumentError("sample_impacts needs n >= 1");
    if (n > scene.max_impacts)
        throw ArgumentError("requested " + std::to_string(n) + " impacts, maximum is " + std::to_string(scene.max_impacts));
    if (scene.primitives.empty()) throw ArgumentError("scene has no primitives to sample");

    Rng rng(derive_seed(seed, 0x1a9ac7));
    std::vector<int> materials;
    for (const auto& [id, modal] : scene.materials) {
        const bool used = std::any_of(scene.primitives.begin(), scene.primitives.end(),
                                      [id = id](const Primitive& p) { return p.material_id == id; });
        if (used) materials.push_back(id);
    }
    std::vector<int> order(materials.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    rng.shuffle(order);

    std::vector<ImpactSample> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const int material = materials[static_cast<std::size_t>(order[static_cast<std::size_t>(i) % order.size()])];
        std::vector<const Primitive*> owners;
        for (const auto& p : scene.primitives)
            if (p.material_id == material) owners.push_back(&p);
        double total_area = 0.0;
        for (const auto* p : owners) total_area += p->surface_area();
        double pick = rng.uniform(0.0, total_area);
        const Primitive* owner = owners.back();
        for (const auto* p : owners) {
            if (pick < p->surface_area()) {
                owner = p;
                break;
            }
            pick -= p->surface_area();
        }
        ImpactSample s;
        s.point = owner->sample_surface(rng);
        s.normal = owner->normal_at(s.point);
        s.labels = owner->labels_at(s.point);
        out.push_back(s);
    }
    return out;
}

/// First surface hit along a ray over all primitives: (t, instance).
inline std::optional<std::pair<double, int>> raycast(const Scene& scene, const Vec3& origin, const Vec3& dir) {
    std::optional<std::pair<double, int>> best;
    for (const auto& p : scene.primitives) {
        if (auto t = p.intersect(origin, dir); t && (!best || *t < best->first)) best = std::make_pair(*t, p.instance_id);
    }
    return best;
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json to_json(const Labels& l) {
    return {{"instance", l.instance_id}, {"part", l.part_id}, {"subpart", l.subpart_id}, {"material", l.material_id}};
}

inline Labels labels_from_json(const nlohmann::json& j) {
    return {j.at("instance").get<int>(), j.at("part").get<int>(), j.at("subpart").get<int>(),
            j.at("material").get<int>()};
}

inline nlohmann::json to_json(const MaterialModal& m) {
    nlohmann::json modes = nlohmann::json::array();
    for (const auto& mode : m.modes)
        modes.push_back({{"frequency", mode.frequency}, {"damping", mode.damping}, {"amplitude", mode.amplitude}});
    return {{"material_id", m.material_id}, {"name", m.name}, {"modes", modes}};
}

inline MaterialModal material_from_json(const nlohmann::json& j) {
    MaterialModal m;
    m.material_id = j.at("material_id").get<int>();
    m.name = j.at("name").get<std::string>();
    for (const auto& mode : j.at("modes"))
        m.modes.push_back(
            {mode.at("frequency").get<double>(), mode.at("damping").get<double>(), mode.at("amplitude").get<double>()});
    return m;
}

inline nlohmann::json to_json(const Primitive& p) {
    return {{"kind", primitive_kind_name(p.kind)},
            {"center", to_json_array(p.center)},
            {"rotation", to_json_array(p.rotation)},
            {"half_extents", to_json_array(p.half_extents)},
            {"instance", p.instance_id},
            {"material", p.material_id},
            {"first_part", p.first_part_id},
            {"first_subpart", p.first_subpart_id}};
}

inline Primitive primitive_from_json(const nlohmann::json& j) {
    Primitive p;
    p.kind = primitive_kind_from_name(j.at("kind").get<std::string>());
    p.center = vec3_from_json(j.at("center"));
    p.rotation = quat_from_json(j.at("rotation"));
    p.half_extents = vec3_from_json(j.at("half_extents"));
    p.instance_id = j.at("instance").get<int>();
    p.material_id = j.at("material").get<int>();
    p.first_part_id = j.at("first_part").get<int>();
    p.first_subpart_id = j.at("first_subpart").get<int>();
    return p;
}

/// Scene document. Gaussian features are not stored here; fitted features
/// live in the feature-field artifact.
inline nlohmann::json to_json(const Scene& scene) {
    nlohmann::json gaussians = nlohmann::json::array();
    for (const auto& g : scene.gaussians) {
        gaussians.push_back({{"mean", to_json_array(g.mean)},
                             {"scale", to_json_array(g.scale)},
                             {"rotation", to_json_array(g.rotation)},
                             {"opacity", g.opacity},
                             {"color", g.color},
                             {"labels", {g.labels.instance_id, g.labels.part_id, g.labels.subpart_id, g.labels.material_id}}});
    }
    nlohmann::json materials = nlohmann::json::array();
    for (const auto& [id, m] : scene.materials) materials.push_back(to_json(m));
    nlohmann::json primitives = nlohmann::json::array();
    for (const auto& p : scene.primitives) primitives.push_back(to_json(p));
    return {{"format", "vaf-scene"},
            {"version", 1},
            {"schema",
             {{"gaussians", "mean[3] m, scale[3] m, rotation[w,x,y,z], opacity, color[rgb], labels[instance,part,subpart,material]"},
              {"primitives", "kind in {plane,box,sphere}, center, rotation[w,x,y,z], half_extents (sphere radius = x)"},
              {"materials", "material_id, name, modes[{frequency Hz, damping 1/s, amplitude}]"}}},
            {"max_impacts", scene.max_impacts},
            {"materials", materials},
            {"primitives", primitives},
            {"gaussians", gaussians}};
}

inline Scene scene_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "vaf-scene") throw ContractError("not a vaf-scene document");
    Scene scene;
    scene.max_impacts = j.at("max_impacts").get<int>();
    for (const auto& m : j.at("materials")) {
        MaterialModal mm = material_from_json(m);
        scene.materials.emplace(mm.material_id, mm);
    }
    for (const auto& p : j.at("primitives")) scene.primitives.push_back(primitive_from_json(p));
    for (const auto& gj : j.at("gaussians")) {
        Gaussian3D g;
        g.mean = vec3_from_json(gj.at("mean"));
        g.scale = vec3_from_json(gj.at("scale"));
        g.rotation = quat_from_json(gj.at("rotation"));
        g.opacity = gj.at("opacity").get<double>();
        g.color = gj.at("color").get<std::array<double, 3>>();
        const auto& l = gj.at("labels");
        g.labels = {l.at(0).get<int>(), l.at(1).get<int>(), l.at(2).get<int>(), l.at(3).get<int>()};
        scene.gaussians.push_back(g);
    }
    scene.validate();
    return scene;
}

} // namespace vaf
