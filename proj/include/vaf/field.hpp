#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vaf/embed.hpp"
#include "vaf/io.hpp"
#include "vaf/segmentation.hpp"
#include "vaf/splat.hpp"

namespace vaf {

inline constexpr double kQueryAlphaFloor = 0.1;

/// Per-pixel supervision for one training view.
struct ViewTargets {
    Camera camera;
    std::array<Image, kLevelCount> maps; ///< W x H x 32, zero off-mask
    std::vector<std::uint8_t> valid;     ///< 1 where a segment covers the pixel
    std::array<std::vector<int>, kLevelCount> segment; ///< segment id per pixel (kNullId off-mask)

    std::size_t valid_count() const {
        std::size_t n = 0;
        for (auto v : valid) n += v;
        return n;
    }
};

struct TargetFeatureMaps {
    std::vector<ViewTargets> views;
};

/// Targets for one view: every pixel of a level-l segment carries
/// encode_region(view image, segment mask).
inline ViewTargets build_view_targets(const Scene& scene, const Camera& cam, const Encoder& visual) {
    const RenderOutput r = rasterize(scene, cam);
    const SegmentMask masks = oracle_masks(scene, cam);
    ViewTargets t;
    t.camera = cam;
    t.valid.assign(static_cast<std::size_t>(cam.width) * cam.height, 0);
    const LabelMap& whole = masks.level(Level::whole);
    for (std::size_t p = 0; p < t.valid.size(); ++p) t.valid[p] = whole.data[p] != kNullId;
    if (t.valid_count() == 0) throw ContractError("view has no segment masks");
    for (int l = 0; l < kLevelCount; ++l) {
        const Level level = static_cast<Level>(l);
        Image& map = t.maps[static_cast<std::size_t>(l)];
        map = Image(cam.width, cam.height, kFeatureDim);
        t.segment[static_cast<std::size_t>(l)] = masks.level(level).data;
        for (int id : masks.segments(level)) {
            const std::vector<bool> region = masks.region(level, id);
            const Embedding e = encode_region(visual, r.rgb, region);
            for (std::size_t p = 0; p < region.size(); ++p)
                if (region[p])
                    for (int c = 0; c < kFeatureDim; ++c) map.data[p * kFeatureDim + static_cast<std::size_t>(c)] = e(c);
        }
    }
    return t;
}

inline TargetFeatureMaps build_targets(const Scene& scene, const std::vector<Camera>& views, const Encoder& visual,
                                       int threads = 1) {
    if (views.empty()) throw ContractError("no training views to build targets from");
    TargetFeatureMaps out;
    out.views.resize(views.size());
    parallel_for(views.size(), threads, [&](std::size_t begin, std::size_t end) {
        for (std::size_t v = begin; v < end; ++v) out.views[v] = build_view_targets(scene, views[v], visual);
    });
    return out;
}

// ---------------------------------------------------------------------------
// Fitting

struct FieldConfig {
    int steps = 300;
    double learning_rate = 0.05;
    int threads = 1;
};

struct FeatureField {
    FeatureTables tables;
    std::array<std::vector<double>, kLevelCount> loss_history;

    double final_loss(Level l) const {
        const auto& h = loss_history[static_cast<std::size_t>(l)];
        return h.empty() ? 0.0 : h.back();
    }
    std::size_t gaussian_count() const { return static_cast<std::size_t>(tables[0].rows()); }
};

namespace detail {

/// Row-compressed sparse matrix with row-parallel products.
struct Csr {
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
    std::vector<std::size_t> offsets{0};
    std::vector<int> index;
    std::vector<double> value;

    FeatureTable multiply(const FeatureTable& x, int threads) const {
        FeatureTable y = FeatureTable::Zero(rows, kFeatureDim);
        parallel_for(static_cast<std::size_t>(rows), threads, [&](std::size_t begin, std::size_t end) {
            for (std::size_t r = begin; r < end; ++r)
                for (std::size_t e = offsets[r]; e < offsets[r + 1]; ++e)
                    y.row(static_cast<Eigen::Index>(r)) += value[e] * x.row(index[e]);
        });
        return y;
    }

    Csr transpose() const {
        Csr t;
        t.rows = cols;
        t.cols = rows;
        std::vector<std::size_t> count(static_cast<std::size_t>(cols) + 1, 0);
        for (int c : index) ++count[static_cast<std::size_t>(c) + 1];
        for (std::size_t c = 1; c < count.size(); ++c) count[c] += count[c - 1];
        t.offsets = count;
        t.index.resize(index.size());
        t.value.resize(value.size());
        std::vector<std::size_t> cursor(count.begin(), count.end() - 1);
        for (Eigen::Index r = 0; r < rows; ++r)
            for (std::size_t e = offsets[static_cast<std::size_t>(r)]; e < offsets[static_cast<std::size_t>(r) + 1]; ++e) {
                const std::size_t dst = cursor[static_cast<std::size_t>(index[e])]++;
                t.index[dst] = static_cast<int>(r);
                t.value[dst] = value[e];
            }
        return t;
    }
};

/// Stacks the compositing weights of all valid target pixels into one matrix
/// W (pixels x Gaussians) and the targets into T, so rendering is W F.
struct FitProblem {
    Csr w;
    Csr wt;
    std::array<FeatureTable, kLevelCount> targets;
};

inline FitProblem fit_problem(const Scene& scene, const TargetFeatureMaps& targets, int threads) {
    FitProblem fp;
    fp.w.cols = static_cast<Eigen::Index>(scene.gaussians.size());
    std::size_t total = 0;
    for (const auto& v : targets.views) total += v.valid_count();
    for (auto& t : fp.targets) t = FeatureTable::Zero(static_cast<Eigen::Index>(total), kFeatureDim);
    Eigen::Index row = 0;
    for (const auto& v : targets.views) {
        const CompositeWeights cw = composite_weights(scene, v.camera, threads);
        for (std::size_t p = 0; p < v.valid.size(); ++p) {
            if (!v.valid[p]) continue;
            for (std::size_t e = cw.begin(p); e < cw.end(p); ++e) {
                fp.w.index.push_back(cw.gaussian[e]);
                fp.w.value.push_back(cw.weight[e]);
            }
            fp.w.offsets.push_back(fp.w.index.size());
            for (int l = 0; l < kLevelCount; ++l)
                for (int c = 0; c < kFeatureDim; ++c)
                    fp.targets[static_cast<std::size_t>(l)](row, c) =
                        v.maps[static_cast<std::size_t>(l)].data[p * kFeatureDim + static_cast<std::size_t>(c)];
            ++row;
        }
    }
    fp.w.rows = row;
    fp.wt = fp.w.transpose();
    return fp;
}

} // namespace detail

/// Mean over valid pixels of |rendered - target|^2 and its gradient
/// (2/N) W^T (W F - T).
inline std::pair<double, FeatureTable> field_loss(const detail::FitProblem& fp, const FeatureTable& f, Level level,
                                                  int threads = 1) {
    const FeatureTable& t = fp.targets[static_cast<std::size_t>(level)];
    const double n = static_cast<double>(std::max<Eigen::Index>(fp.w.rows, 1));
    const FeatureTable residual = fp.w.multiply(f, threads) - t;
    const double loss = residual.squaredNorm() / n;
    FeatureTable grad = fp.wt.multiply(residual, threads) * (2.0 / n);
    return {loss, grad};
}

/// Independent Adam fits of the three feature levels; geometry is read only.
inline FeatureField fit_features(const Scene& scene, const TargetFeatureMaps& targets, const FieldConfig& cfg = {}) {
    if (targets.views.empty()) throw ContractError("no targets to fit");
    const detail::FitProblem fp = detail::fit_problem(scene, targets, cfg.threads);
    FeatureField field;
    const Eigen::Index n = static_cast<Eigen::Index>(scene.gaussians.size());
    for (int l = 0; l < kLevelCount; ++l) {
        FeatureTable f = FeatureTable::Zero(n, kFeatureDim);
        nn::Optimizer opt({nn::OptimizerKind::adam, cfg.learning_rate});
        auto& history = field.loss_history[static_cast<std::size_t>(l)];
        for (int step = 0; step <= cfg.steps; ++step) {
            auto [loss, grad] = field_loss(fp, f, static_cast<Level>(l), cfg.threads);
            if (!std::isfinite(loss)) throw NumericError("feature fit diverged");
            history.push_back(loss);
            if (step == cfg.steps) break;
            Eigen::Map<nn::Vector> p(f.data(), f.size());
            nn::Vector pv = p;
            opt.step(pv, Eigen::Map<const nn::Vector>(grad.data(), grad.size()));
            p = pv;
        }
        field.tables[static_cast<std::size_t>(l)] = f;
    }
    return field;
}

// ---------------------------------------------------------------------------
// Queries

inline RenderOutput render_field(const FeatureField& field, const Scene& scene, const Camera& cam, int threads = 1,
                                 unsigned channels = channel::features | channel::alpha) {
    RenderOptions opts;
    opts.channels = channels;
    opts.threads = threads;
    opts.features = &field.tables;
    return rasterize(scene, cam, opts);
}

using LevelFeatures = std::array<Embedding, kLevelCount>;

/// Bilinear read of the three rendered feature maps, each renormalized.
inline LevelFeatures query_rendered(const RenderOutput& r, const Vec2& pixel) {
    const double alpha = bilinear(r.alpha, pixel.x(), pixel.y())[0];
    if (!(alpha > kQueryAlphaFloor)) throw NoSurfaceError("no surface under the query pixel");
    LevelFeatures out;
    for (int l = 0; l < kLevelCount; ++l) {
        const auto v = bilinear(r.features[static_cast<std::size_t>(l)], pixel.x(), pixel.y());
        Embedding e = Eigen::Map<const Eigen::VectorXd>(v.data(), kFeatureDim);
        const double n = e.norm();
        if (!(n > 1e-12)) throw NoSurfaceError("rendered feature vanishes at the query pixel");
        out[static_cast<std::size_t>(l)] = e / n;
    }
    return out;
}

inline LevelFeatures query_features(const FeatureField& field, const Scene& scene, const Camera& cam,
                                    const Vec2& pixel) {
    return query_rendered(render_field(field, scene, cam), pixel);
}

// ---------------------------------------------------------------------------
// Persistence: field.json plus one float-binary table per level

inline void write_field(const FeatureField& field, const std::filesystem::path& dir) {
    nlohmann::json j;
    j["gaussians"] = field.gaussian_count();
    j["dim"] = kFeatureDim;
    for (int l = 0; l < kLevelCount; ++l) {
        const std::string name = level_name(static_cast<Level>(l));
        const std::string file = "features_" + name + ".vafb";
        io::write_float_array(dir / file, io::matrix_to_float_array(field.tables[static_cast<std::size_t>(l)]));
        j["levels"][name] = {{"path", file}, {"loss", field.loss_history[static_cast<std::size_t>(l)]}};
    }
    io::write_json(dir / "field.json", j);
}

inline FeatureField read_field(const std::filesystem::path& dir) {
    const nlohmann::json j = io::read_json(dir / "field.json");
    FeatureField field;
    const auto n = j.at("gaussians").get<std::uint64_t>();
    for (int l = 0; l < kLevelCount; ++l) {
        const auto& lj = j.at("levels").at(level_name(static_cast<Level>(l)));
        const io::FloatArray a = io::read_float_array(dir / lj.at("path").get<std::string>());
        if (a.shape.size() != 2 || a.shape[0] != n || a.shape[1] != static_cast<std::uint64_t>(kFeatureDim))
            throw ParseError("feature table shape does not match field.json", 0);
        FeatureTable t(static_cast<Eigen::Index>(n), kFeatureDim);
        for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = a.data[static_cast<std::size_t>(i)];
        field.tables[static_cast<std::size_t>(l)] = t;
        field.loss_history[static_cast<std::size_t>(l)] = lj.at("loss").get<std::vector<double>>();
    }
    return field;
}

/// Copies the fitted features into the scene's Gaussians.
inline void apply_field(const FeatureField& field, Scene& scene) {
    if (field.gaussian_count() != scene.gaussians.size()) throw ArgumentError("field does not match the scene");
    for (std::size_t g = 0; g < scene.gaussians.size(); ++g)
        for (int l = 0; l < kLevelCount; ++l)
            scene.gaussians[g].features[static_cast<std::size_t>(l)] =
                field.tables[static_cast<std::size_t>(l)].row(static_cast<Eigen::Index>(g)).transpose();
}

} // namespace vaf
