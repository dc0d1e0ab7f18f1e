#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "vaf/camera.hpp"
#include "vaf/grid.hpp"
#include "vaf/parallel.hpp"
#include "vaf/scene.hpp"

namespace vaf {

inline constexpr double kNearPlane = 0.05;
inline constexpr double kLowPassPx2 = 0.3;
inline constexpr double kAlphaClamp = 0.99;
inline constexpr double kTransmittanceStop = 1e-4;
/// A Gaussian contributes to a pixel only inside its 3-sigma ellipse.
inline constexpr double kCutoffMahalanobis2 = 9.0;
inline constexpr double kDepthAlphaFloor = 1e-4;

/// Per-level per-Gaussian feature rows (N x kFeatureDim).
using FeatureTable = Eigen::Matrix<double, Eigen::Dynamic, kFeatureDim, Eigen::RowMajor>;
using FeatureTables = std::array<FeatureTable, kLevelCount>;

struct ProjectedGaussian {
    Vec2 mean = Vec2::Zero();
    Mat2 cov = Mat2::Identity();
    double depth = 0.0;
};

/// EWA projection: cov2d = J W Sigma W^T J^T + 0.3 I. Returns nothing when the
/// mean is at or behind the near plane.
inline std::optional<ProjectedGaussian> project_gaussian(const Gaussian3D& g, const Camera& cam) {
    const Vec3 c = cam.to_camera(g.mean);
    if (c.z() <= kNearPlane) return std::nullopt;
    const Mat3 sigma_cam = cam.rotation * g.covariance() * cam.rotation.transpose();
    const double z = c.z();
    Eigen::Matrix<double, 2, 3> jac;
    jac << cam.fx / z, 0.0, -cam.fx * c.x() / (z * z), 0.0, cam.fy / z, -cam.fy * c.y() / (z * z);
    Mat2 cov = jac * sigma_cam * jac.transpose();
    cov = 0.5 * (cov + cov.transpose());
    cov(0, 0) += kLowPassPx2;
    cov(1, 1) += kLowPassPx2;
    ProjectedGaussian p;
    p.mean = Vec2(cam.fx * c.x() / z + cam.cx, cam.fy * c.y() / z + cam.cy);
    p.cov = cov;
    p.depth = z;
    return p;
}

/// Sparse per-pixel compositing weights, front to back. Entries for pixel p
/// live in [offsets[p], offsets[p+1]).
struct CompositeWeights {
    int width = 0;
    int height = 0;
    std::vector<std::size_t> offsets;
    std::vector<int> gaussian;
    std::vector<double> weight;
    std::vector<double> depth;

    std::size_t pixel_index(int x, int y) const { return static_cast<std::size_t>(y) * width + x; }
    std::size_t begin(std::size_t p) const { return offsets[p]; }
    std::size_t end(std::size_t p) const { return offsets[p + 1]; }
};

namespace detail {

struct Splat2D {
    int index = 0;
    double depth = 0.0;
    double mx = 0.0, my = 0.0;
    double ia = 0.0, ib = 0.0, ic = 0.0; // inverse covariance [[ia, ib], [ib, ic]]
    double opacity = 0.0;
    int x0 = 0, x1 = -1, y0 = 0, y1 = -1; // pixel bounding box (inclusive)
    Vec3 normal = Vec3::UnitZ();            // thinnest axis, camera frame
    double plane_offset = 0.0;              // normal . mean (camera frame)
    double depth_slack = 0.0;               // clamp for per-pixel depth around the mean depth
};

/// Depth where the pixel ray meets the splat's tangent plane; falls back to the
/// mean depth at grazing incidence.
inline double splat_depth_at(const Splat2D& s, const Vec3& ray) {
    const double denom = s.normal.dot(ray);
    if (std::abs(denom) < 0.2 * ray.norm()) return s.depth;
    return std::clamp(s.plane_offset / denom, s.depth - s.depth_slack, s.depth + s.depth_slack);
}

inline constexpr int kTileSize = 8;

} // namespace detail

/// Per-pixel weights w_i = alpha_i T_i with Gaussians sorted by (depth, index).
/// Bit-identical for any thread count: every pixel is computed independently.
/// Depth entries are ray/tangent-plane intersections of each splat.
inline CompositeWeights composite_weights(const Scene& scene, const Camera& cam, int threads = 1) {
    cam.validate();
    const int width = cam.width;
    const int height = cam.height;

    std::vector<detail::Splat2D> splats;
    splats.reserve(scene.gaussians.size());
    for (std::size_t i = 0; i < scene.gaussians.size(); ++i) {
        const auto proj = project_gaussian(scene.gaussians[i], cam);
        if (!proj) continue;
        const Mat2& cov = proj->cov;
        const double det = cov.determinant();
        if (!(det > 0.0)) continue;
        detail::Splat2D s;
        s.index = static_cast<int>(i);
        s.depth = proj->depth;
        s.mx = proj->mean.x();
        s.my = proj->mean.y();
        s.ia = cov(1, 1) / det;
        s.ib = -cov(0, 1) / det;
        s.ic = cov(0, 0) / det;
        s.opacity = scene.gaussians[i].opacity;
        {
            const Gaussian3D& g = scene.gaussians[i];
            Eigen::Index thin = 0;
            g.scale.minCoeff(&thin);
            s.normal = cam.rotation * (g.rotation.toRotationMatrix().col(thin));
            s.plane_offset = s.normal.dot(cam.to_camera(g.mean));
            s.depth_slack = 3.0 * g.scale.maxCoeff();
        }
        // Extent of the 3-sigma ellipse along each image axis.
        const double rx = 3.0 * std::sqrt(cov(0, 0));
        const double ry = 3.0 * std::sqrt(cov(1, 1));
        s.x0 = std::max(0, static_cast<int>(std::ceil(s.mx - rx)));
        s.x1 = std::min(width - 1, static_cast<int>(std::floor(s.mx + rx)));
        s.y0 = std::max(0, static_cast<int>(std::ceil(s.my - ry)));
        s.y1 = std::min(height - 1, static_cast<int>(std::floor(s.my + ry)));
        if (s.x0 > s.x1 || s.y0 > s.y1) continue;
        splats.push_back(s);
    }
    std::sort(splats.begin(), splats.end(), [](const detail::Splat2D& a, const detail::Splat2D& b) {
        return a.depth != b.depth ? a.depth < b.depth : a.index < b.index;
    });

    const int tiles_x = (width + detail::kTileSize - 1) / detail::kTileSize;
    const int tiles_y = (height + detail::kTileSize - 1) / detail::kTileSize;
    std::vector<std::vector<int>> tiles(static_cast<std::size_t>(tiles_x * tiles_y));
    for (std::size_t k = 0; k < splats.size(); ++k) {
        const auto& s = splats[k];
        for (int ty = s.y0 / detail::kTileSize; ty <= s.y1 / detail::kTileSize; ++ty)
            for (int tx = s.x0 / detail::kTileSize; tx <= s.x1 / detail::kTileSize; ++tx)
                tiles[static_cast<std::size_t>(ty * tiles_x + tx)].push_back(static_cast<int>(k));
    }

    struct Entry {
        int gaussian;
        double weight;
        double depth;
    };
    const std::size_t pixel_count = static_cast<std::size_t>(width) * height;
    std::vector<std::vector<Entry>> per_pixel(pixel_count);
    parallel_for(static_cast<std::size_t>(height), threads, [&](std::size_t row_begin, std::size_t row_end) {
        for (std::size_t yy = row_begin; yy < row_end; ++yy) {
            const int y = static_cast<int>(yy);
            for (int x = 0; x < width; ++x) {
                const auto& list = tiles[static_cast<std::size_t>((y / detail::kTileSize) * tiles_x + x / detail::kTileSize)];
                auto& out = per_pixel[static_cast<std::size_t>(y) * width + x];
                double transmittance = 1.0;
                const Vec3 ray((x - cam.cx) / cam.fx, (y - cam.cy) / cam.fy, 1.0);
                for (const int k : list) {
                    if (transmittance < kTransmittanceStop) break;
                    const auto& s = splats[static_cast<std::size_t>(k)];
                    if (x < s.x0 || x > s.x1 || y < s.y0 || y > s.y1) continue;
                    const double dx = x - s.mx;
                    const double dy = y - s.my;
                    const double m = s.ia * dx * dx + 2.0 * s.ib * dx * dy + s.ic * dy * dy;
                    if (m > kCutoffMahalanobis2) continue;
                    const double alpha = std::min(s.opacity * std::exp(-0.5 * m), kAlphaClamp);
                    out.push_back({s.index, alpha * transmittance, detail::splat_depth_at(s, ray)});
                    transmittance *= 1.0 - alpha;
                }
            }
        }
    });

    CompositeWeights w;
    w.width = width;
    w.height = height;
    w.offsets.resize(pixel_count + 1, 0);
    for (std::size_t p = 0; p < pixel_count; ++p) w.offsets[p + 1] = w.offsets[p] + per_pixel[p].size();
    w.gaussian.reserve(w.offsets.back());
    w.weight.reserve(w.offsets.back());
    w.depth.reserve(w.offsets.back());
    for (const auto& list : per_pixel)
        for (const auto& e : list) {
            w.gaussian.push_back(e.gaussian);
            w.weight.push_back(e.weight);
            w.depth.push_back(e.depth);
        }
    return w;
}

namespace channel {
inline constexpr unsigned rgb = 1u << 0;
inline constexpr unsigned depth = 1u << 1;
inline constexpr unsigned alpha = 1u << 2;
inline constexpr unsigned features_s = 1u << 3;
inline constexpr unsigned features_p = 1u << 4;
inline constexpr unsigned features_w = 1u << 5;
inline constexpr unsigned top_gaussian = 1u << 6;
inline constexpr unsigned basic = rgb | depth | alpha;
inline constexpr unsigned features = features_s | features_p | features_w;
inline constexpr unsigned all = basic | features | top_gaussian;

inline constexpr unsigned feature_level(Level level) { return features_s << static_cast<unsigned>(level); }
} // namespace channel

struct RenderOptions {
    unsigned channels = channel::basic;
    int threads = 1;
    /// Per-Gaussian features to render; when null, Gaussian3D::features are used.
    const FeatureTables* features = nullptr;
};

struct RenderOutput {
    Image rgb;
    Image depth;
    Image alpha;
    std::array<Image, kLevelCount> features;
    /// Index of the Gaussian with the largest weight per pixel (-1 if none).
    LabelMap top_gaussian;
};

/// Accumulates the requested channels from precomputed weights.
inline RenderOutput composite(const Scene& scene, const CompositeWeights& w, const RenderOptions& options = {}) {
    RenderOutput out;
    const int width = w.width;
    const int height = w.height;
    out.alpha = Image(width, height, 1);
    if (options.channels & channel::rgb) out.rgb = Image(width, height, 3);
    if (options.channels & channel::depth) out.depth = Image(width, height, 1);
    if (options.channels & channel::top_gaussian) out.top_gaussian = LabelMap(width, height, 1, -1);
    for (int l = 0; l < kLevelCount; ++l)
        if (options.channels & channel::feature_level(static_cast<Level>(l)))
            out.features[static_cast<std::size_t>(l)] = Image(width, height, kFeatureDim);

    const std::size_t pixel_count = static_cast<std::size_t>(width) * height;
    parallel_for(pixel_count, options.threads, [&](std::size_t begin, std::size_t end) {
        for (std::size_t p = begin; p < end; ++p) {
            double alpha = 0.0;
            double depth = 0.0;
            double best = -1.0;
            int best_index = -1;
            std::array<double, 3> rgb{0.0, 0.0, 0.0};
            for (std::size_t e = w.begin(p); e < w.end(p); ++e) {
                const double wt = w.weight[e];
                const int gi = w.gaussian[e];
                alpha += wt;
                depth += wt * w.depth[e];
                const auto& g = scene.gaussians[static_cast<std::size_t>(gi)];
                for (std::size_t c = 0; c < 3; ++c) rgb[c] += wt * g.color[c];
                if (wt > best) {
                    best = wt;
                    best_index = gi;
                }
                for (int l = 0; l < kLevelCount; ++l) {
                    Image& fm = out.features[static_cast<std::size_t>(l)];
                    if (fm.empty()) continue;
                    double* dst = fm.data.data() + p * kFeatureDim;
                    if (options.features) {
                        const auto row = (*options.features)[static_cast<std::size_t>(l)].row(gi);
                        for (int c = 0; c < kFeatureDim; ++c) dst[c] += wt * row(c);
                    } else {
                        const Feature& f = g.features[static_cast<std::size_t>(l)];
                        for (int c = 0; c < kFeatureDim; ++c) dst[c] += wt * f(c);
                    }
                }
            }
            out.alpha.data[p] = alpha;
            if (!out.rgb.empty())
                for (std::size_t c = 0; c < 3; ++c) out.rgb.data[p * 3 + c] = rgb[c];
            if (!out.depth.empty()) out.depth.data[p] = alpha > kDepthAlphaFloor ? depth / alpha : 0.0;
            if (!out.top_gaussian.empty()) out.top_gaussian.data[p] = best_index;
        }
    });
    return out;
}

inline RenderOutput rasterize(const Scene& scene, const Camera& cam, const RenderOptions& options = {}) {
    if (options.features)
        for (const auto& table : *options.features)
            if (table.rows() != static_cast<Eigen::Index>(scene.gaussians.size()))
                throw ArgumentError("feature table row count does not match the scene");
    return composite(scene, composite_weights(scene, cam, options.threads), options);
}

/// Pinhole back-projection of a pixel with depth read from `depth_map`
/// (bilinear over neighbors that carry a surface).
inline Vec3 backproject(double x, double y, const Image& depth_map, const Camera& cam) {
    if (depth_map.width != cam.width || depth_map.height != cam.height)
        throw ArgumentError("depth map size does not match the camera");
    const int nx = static_cast<int>(std::lround(x));
    const int ny = static_cast<int>(std::lround(y));
    if (!depth_map.contains(nx, ny)) throw NoSurfaceError("pixel outside the depth map");
    if (!(depth_map.at(nx, ny) > 0.0)) throw NoSurfaceError("no surface at the requested pixel");

    const int x0 = static_cast<int>(std::floor(x));
    const int y0 = static_cast<int>(std::floor(y));
    const double ax = x - x0;
    const double ay = y - y0;
    double sum_w = 0.0;
    double sum_d = 0.0;
    for (int dy = 0; dy <= 1; ++dy)
        for (int dx = 0; dx <= 1; ++dx) {
            const int px = x0 + dx;
            const int py = y0 + dy;
            const double wgt = (dx ? ax : 1.0 - ax) * (dy ? ay : 1.0 - ay);
            if (wgt <= 0.0 || !depth_map.contains(px, py)) continue;
            const double d = depth_map.at(px, py);
            if (!(d > 0.0)) continue;
            sum_w += wgt;
            sum_d += wgt * d;
        }
    const double d = sum_w > 0.0 ? sum_d / sum_w : depth_map.at(nx, ny);
    const Vec3 cam_point((x - cam.cx) * d / cam.fx, (y - cam.cy) * d / cam.fy, d);
    return cam.to_world(cam_point);
}

} // namespace vaf
