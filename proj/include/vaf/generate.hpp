#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "vaf/audio.hpp"
#include "vaf/capture.hpp"
#include "vaf/embed.hpp"
#include "vaf/field.hpp"
#include "vaf/metrics.hpp"
#include "vaf/nn.hpp"

namespace vaf {

inline constexpr int kModalDim = 3 * kModesPerMaterial;
inline constexpr int kConditionDim = kLevelCount * kFeatureDim;
inline constexpr int kTimeEmbedDim = 16;
inline constexpr int kDiffusionSteps = 250;
inline constexpr double kGuidanceScale = 6.0;
inline constexpr double kMinFrequency = 80.0;
inline constexpr double kMaxFrequency = 6000.0;
inline constexpr double kMinDamping = 2.0;
inline constexpr double kMaxDamping = 80.0;
inline constexpr int kLocalPatch = 12;

using ModalVector = Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Modal parameter normalization

/// Mode k occupies z[3k..3k+2] = (log f, log d, a), each mapped to [-1, 1].
inline ModalVector normalize_modal(const MaterialModal& m, const ModalBounds& b) {
    if (m.modes.size() != static_cast<std::size_t>(kModesPerMaterial))
        throw ArgumentError("material must have " + std::to_string(kModesPerMaterial) + " modes");
    ModalVector z(kModalDim);
    for (int k = 0; k < kModesPerMaterial; ++k) {
        const Mode& mode = m.modes[static_cast<std::size_t>(k)];
        const std::array<double, 3> v{std::log(mode.frequency), std::log(std::max(mode.damping, 1e-3)), mode.amplitude};
        for (int c = 0; c < 3; ++c) {
            const auto i = static_cast<std::size_t>(3 * k + c);
            z(static_cast<Eigen::Index>(i)) = 2.0 * (v[static_cast<std::size_t>(c)] - b.lo[i]) / (b.hi[i] - b.lo[i]) - 1.0;
        }
    }
    return z;
}

/// Inverse of normalize_modal after clamping z to [-1, 1] and the physical
/// values to their valid ranges. Modes are re-sorted by frequency and nudged
/// apart so the result is always synthesizable.
inline MaterialModal denormalize_modal(const ModalVector& z, const ModalBounds& b, int material_id = -1) {
    if (z.size() != kModalDim) throw ArgumentError("modal vector must have 12 entries");
    MaterialModal m;
    m.material_id = material_id;
    m.name = "generated";
    for (int k = 0; k < kModesPerMaterial; ++k) {
        std::array<double, 3> v{};
        for (int c = 0; c < 3; ++c) {
            const auto i = static_cast<std::size_t>(3 * k + c);
            const double zi = std::clamp(z(static_cast<Eigen::Index>(i)), -1.0, 1.0);
            v[static_cast<std::size_t>(c)] = b.lo[i] + 0.5 * (zi + 1.0) * (b.hi[i] - b.lo[i]);
        }
        Mode mode;
        mode.frequency = std::clamp(std::exp(v[0]), kMinFrequency, kMaxFrequency);
        mode.damping = std::clamp(std::exp(v[1]), kMinDamping, kMaxDamping);
        mode.amplitude = std::clamp(v[2], 1e-3, 1.0);
        m.modes.push_back(mode);
    }
    std::sort(m.modes.begin(), m.modes.end(), [](const Mode& a, const Mode& c) { return a.frequency < c.frequency; });
    for (std::size_t k = 1; k < m.modes.size(); ++k)
        m.modes[k].frequency = std::max(m.modes[k].frequency, m.modes[k - 1].frequency + 1.0);
    return m;
}

inline Eigen::VectorXd make_condition(const LevelFeatures& f) {
    Eigen::VectorXd c(kConditionDim);
    for (int l = 0; l < kLevelCount; ++l) c.segment(l * kFeatureDim, kFeatureDim) = f[static_cast<std::size_t>(l)];
    return c;
}

/// Ablation condition: one region embedding of the square patch around the
/// pixel (no segmentation), repeated in all three slots.
inline Eigen::VectorXd local_condition(const Encoder& visual, const Image& image, const Vec2& pixel,
                                       int patch = kLocalPatch) {
    std::vector<bool> mask(image.pixel_count(), false);
    const int x0 = static_cast<int>(std::lround(pixel.x())) - patch / 2;
    const int y0 = static_cast<int>(std::lround(pixel.y())) - patch / 2;
    for (int y = std::max(0, y0); y < std::min(image.height, y0 + patch); ++y)
        for (int x = std::max(0, x0); x < std::min(image.width, x0 + patch); ++x)
            mask[static_cast<std::size_t>(y) * image.width + x] = true;
    const Embedding e = encode_region(visual, image, mask);
    Eigen::VectorXd c(kConditionDim);
    for (int l = 0; l < kLevelCount; ++l) c.segment(l * kFeatureDim, kFeatureDim) = e;
    return c;
}

// ---------------------------------------------------------------------------
// Training data

/// Conditions, normalized targets and labels for a set of events.
struct GenerationData {
    nn::Matrix conditions; ///< N x 96
    nn::Matrix targets;    ///< N x 12
    std::vector<int> materials;
    std::vector<int> event_ids;
    int skipped = 0; ///< events whose marker pixel had no rendered surface
};

inline GenerationData generation_data(const Scene& scene, const FeatureField& field,
                                      const std::vector<const ImpactEvent*>& events, const ModalBounds& bounds,
                                      int threads = 1) {
    std::vector<std::optional<Eigen::VectorXd>> conds(events.size());
    parallel_for(events.size(), threads, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            try {
                conds[i] = make_condition(query_features(field, scene, events[i]->camera, events[i]->marker_pixel));
            } catch (const NoSurfaceError&) {
            }
        }
    });
    GenerationData d;
    std::vector<Eigen::VectorXd> c, t;
    for (std::size_t i = 0; i < events.size(); ++i) {
        if (!conds[i]) {
            ++d.skipped;
            continue;
        }
        c.push_back(*conds[i]);
        t.push_back(normalize_modal(scene.materials.at(events[i]->labels.material_id), bounds));
        d.materials.push_back(events[i]->labels.material_id);
        d.event_ids.push_back(events[i]->event_id);
    }
    d.conditions.resize(static_cast<Eigen::Index>(c.size()), kConditionDim);
    d.targets.resize(static_cast<Eigen::Index>(t.size()), kModalDim);
    for (std::size_t i = 0; i < c.size(); ++i) {
        d.conditions.row(static_cast<Eigen::Index>(i)) = c[i].transpose();
        d.targets.row(static_cast<Eigen::Index>(i)) = t[i].transpose();
    }
    return d;
}

/// Same data with conditions permuted across events (seeded); the control
/// that can only learn the marginal over materials.
inline GenerationData shuffle_conditions(GenerationData d, std::uint64_t seed) {
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(d.conditions.rows()));
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<Eigen::Index>(i);
    Rng rng(derive_seed(seed, 0x5b0ff1e));
    rng.shuffle(perm);
    const nn::Matrix c = d.conditions;
    for (std::size_t i = 0; i < perm.size(); ++i) d.conditions.row(static_cast<Eigen::Index>(i)) = c.row(perm[i]);
    return d;
}

inline void require_materials(const std::vector<int>& materials) {
    std::vector<int> m = materials;
    std::sort(m.begin(), m.end());
    if (std::unique(m.begin(), m.end()) - m.begin() < 2)
        throw ConfigError("generator training needs at least 2 materials");
}

/// Minibatch rows drawn by epoch-wise shuffling.
class BatchSampler {
public:
    BatchSampler(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed) {
        for (std::size_t i = 0; i < n; ++i) order_[i] = i;
        cursor_ = n;
    }
    std::vector<std::size_t> next(std::size_t batch) {
        std::vector<std::size_t> out;
        out.reserve(batch);
        while (out.size() < batch) {
            if (cursor_ == order_.size()) {
                rng_.shuffle(order_);
                cursor_ = 0;
            }
            out.push_back(order_[cursor_++]);
        }
        return out;
    }
    Rng& rng() { return rng_; }

private:
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
    Rng rng_;
};

inline nn::Matrix gather_rows(const nn::Matrix& m, const std::vector<std::size_t>& rows) {
    nn::Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
    return out;
}

// ---------------------------------------------------------------------------
// Backend A: regression

struct RegressorConfig {
    int steps = 3000;
    int batch_size = 32;
    double learning_rate = 1e-3;
    int hidden = 64;
};

inline nn::DenseNet make_regressor(int hidden, std::uint64_t seed) {
    return nn::DenseNet({kConditionDim, hidden, kModalDim}, {nn::Activation::relu, nn::Activation::tanh}, seed);
}

inline std::pair<nn::DenseNet, std::vector<double>> train_regressor(const GenerationData& data,
                                                                   const RegressorConfig& cfg, std::uint64_t seed) {
    require_materials(data.materials);
    nn::DenseNet net = make_regressor(cfg.hidden, derive_seed(seed, 0x4e6));
    nn::Optimizer opt({nn::OptimizerKind::adam, cfg.learning_rate});
    BatchSampler sampler(static_cast<std::size_t>(data.conditions.rows()), derive_seed(seed, 0xb47c4));
    const auto batch = static_cast<std::size_t>(std::min<Eigen::Index>(cfg.batch_size, data.conditions.rows()));
    std::vector<double> log;
    for (int step = 0; step < cfg.steps; ++step) {
        const auto rows = sampler.next(batch);
        const auto [pred, tape] = nn::forward(net, gather_rows(data.conditions, rows));
        const auto [loss, grad] = nn::mse_loss(pred, gather_rows(data.targets, rows));
        if (!std::isfinite(loss)) throw NumericError("regressor loss is not finite");
        log.push_back(loss);
        opt.step(net, nn::backward(net, tape, grad));
    }
    return {net, log};
}

// ---------------------------------------------------------------------------
// Backend B: conditional DDPM over modal parameters

struct DiffusionSchedule {
    std::vector<double> beta;      ///< index t-1 for t = 1..T
    std::vector<double> alpha_bar; ///< cumulative product

    int steps() const { return static_cast<int>(beta.size()); }
};

inline DiffusionSchedule linear_schedule(int T = kDiffusionSteps, double beta_1 = 1e-4, double beta_T = 0.02) {
    if (T < 1) throw ArgumentError("diffusion needs at least one step");
    DiffusionSchedule s;
    double prod = 1.0;
    for (int t = 1; t <= T; ++t) {
        const double b = T == 1 ? beta_1 : beta_1 + (beta_T - beta_1) * (t - 1) / (T - 1);
        s.beta.push_back(b);
        prod *= 1.0 - b;
        s.alpha_bar.push_back(prod);
    }
    return s;
}

/// Sinusoidal embedding of the timestep: (sin(t w_k), cos(t w_k)), w_k = 10000^(-k/8).
inline Eigen::RowVectorXd time_embedding(int t) {
    Eigen::RowVectorXd e(kTimeEmbedDim);
    for (int k = 0; k < kTimeEmbedDim / 2; ++k) {
        const double w = std::pow(10000.0, -static_cast<double>(k) / (kTimeEmbedDim / 2));
        e(k) = std::sin(t * w);
        e(k + kTimeEmbedDim / 2) = std::cos(t * w);
    }
    return e;
}

struct DiffusionModel {
    nn::DenseNet net;
    Eigen::VectorXd null_token;
    DiffusionSchedule schedule;
};

struct DiffusionConfig {
    int steps = 20000;
    int batch_size = 32;
    double learning_rate = 1e-3;
    double condition_drop = 0.1;
    int hidden = 128;
    int timesteps = kDiffusionSteps;
    double beta_1 = 1e-4;
    double beta_T = 0.02;
};

inline DiffusionModel make_diffusion(const DiffusionConfig& cfg, std::uint64_t seed) {
    DiffusionModel m;
    m.net = nn::DenseNet({kModalDim + kTimeEmbedDim + kConditionDim, cfg.hidden, cfg.hidden, kModalDim},
                         {nn::Activation::relu, nn::Activation::relu, nn::Activation::identity}, seed);
    m.null_token = Eigen::VectorXd::Zero(kConditionDim);
    m.schedule = linear_schedule(cfg.timesteps, cfg.beta_1, cfg.beta_T);
    return m;
}

inline nn::Matrix diffusion_input(const nn::Matrix& zt, const std::vector<int>& t, const nn::Matrix& cond) {
    nn::Matrix x(zt.rows(), kModalDim + kTimeEmbedDim + kConditionDim);
    for (Eigen::Index i = 0; i < zt.rows(); ++i) {
        x.row(i).head(kModalDim) = zt.row(i);
        x.row(i).segment(kModalDim, kTimeEmbedDim) = time_embedding(t[static_cast<std::size_t>(i)]);
        x.row(i).tail(kConditionDim) = cond.row(i);
    }
    return x;
}

struct DiffusionLoss {
    double loss = 0.0;
    nn::Gradients grads;
    Eigen::VectorXd null_grad; ///< gradient w.r.t. the null token (rows with dropped[i])
};

/// Noise-prediction MSE for explicit timesteps and noise:
/// z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps, loss = mean |eps_hat - eps|^2.
inline DiffusionLoss diffusion_loss(const DiffusionModel& m, const nn::Matrix& z0, const nn::Matrix& cond,
                                    const std::vector<int>& t, const nn::Matrix& eps, const std::vector<bool>& dropped) {
    const Eigen::Index n = z0.rows();
    nn::Matrix zt(n, kModalDim);
    nn::Matrix c = cond;
    for (Eigen::Index i = 0; i < n; ++i) {
        const int ti = t[static_cast<std::size_t>(i)];
        if (ti < 1 || ti > m.schedule.steps()) throw ArgumentError("timestep outside the schedule");
        const double ab = m.schedule.alpha_bar[static_cast<std::size_t>(ti - 1)];
        zt.row(i) = std::sqrt(ab) * z0.row(i) + std::sqrt(1.0 - ab) * eps.row(i);
        if (dropped[static_cast<std::size_t>(i)]) c.row(i) = m.null_token.transpose();
    }
    const auto [pred, tape] = nn::forward(m.net, diffusion_input(zt, t, c));
    const auto [loss, grad] = nn::mse_loss(pred, eps);
    DiffusionLoss out;
    out.loss = loss;
    out.grads = nn::backward(m.net, tape, grad);
    out.null_grad = Eigen::VectorXd::Zero(kConditionDim);
    for (Eigen::Index i = 0; i < n; ++i)
        if (dropped[static_cast<std::size_t>(i)])
            out.null_grad += out.grads.input.row(i).tail(kConditionDim).transpose();
    return out;
}

struct DiffusionLog {
    std::vector<double> loss;
    std::vector<bool> dropped; ///< per training step
};

/// Each step draws a batch, timesteps uniform in 1..T and Gaussian noise; with
/// probability `condition_drop` the whole step trains the null token.
inline std::pair<DiffusionModel, DiffusionLog> train_diffusion(const GenerationData& data, const DiffusionConfig& cfg,
                                                               std::uint64_t seed) {
    require_materials(data.materials);
    DiffusionModel m = make_diffusion(cfg, derive_seed(seed, 0xd1ff));
    const Eigen::Index np = m.net.parameter_count();
    nn::Vector params(np + kConditionDim);
    params << m.net.parameters(), m.null_token;
    nn::Optimizer opt({nn::OptimizerKind::adam, cfg.learning_rate});
    BatchSampler sampler(static_cast<std::size_t>(data.conditions.rows()), derive_seed(seed, 0xd1ffb));
    Rng& rng = sampler.rng();
    const auto batch = static_cast<std::size_t>(std::min<Eigen::Index>(cfg.batch_size, data.conditions.rows()));
    DiffusionLog log;
    for (int step = 0; step < cfg.steps; ++step) {
        const auto rows = sampler.next(batch);
        const bool drop = rng.bernoulli(cfg.condition_drop);
        std::vector<int> t(batch);
        nn::Matrix eps(static_cast<Eigen::Index>(batch), kModalDim);
        for (std::size_t i = 0; i < batch; ++i) {
            t[i] = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(m.schedule.steps())));
            for (int k = 0; k < kModalDim; ++k) eps(static_cast<Eigen::Index>(i), k) = rng.normal();
        }
        const DiffusionLoss l = diffusion_loss(m, gather_rows(data.targets, rows), gather_rows(data.conditions, rows), t,
                                               eps, std::vector<bool>(batch, drop));
        if (!std::isfinite(l.loss)) throw NumericError("diffusion loss is not finite");
        log.loss.push_back(l.loss);
        log.dropped.push_back(drop);
        nn::Vector g(params.size());
        g << l.grads.flat(), l.null_grad;
        opt.step(params, g);
        m.net.set_parameters(params.head(np));
        m.null_token = params.tail(kConditionDim);
    }
    return {m, log};
}

namespace detail {

inline ModalVector sample_row(const DiffusionModel& m, const nn::Matrix& cond, double w, const std::vector<int>& ts,
                              Rng& rng) {
    nn::Matrix z(1, kModalDim);
    for (int k = 0; k < kModalDim; ++k) z(0, k) = rng.normal();
    const nn::Matrix uncond = m.null_token.transpose();
    const auto steps = static_cast<int>(ts.size());
    for (int s = steps - 1; s >= 0; --s) {
        const int t = ts[static_cast<std::size_t>(s)];
        const double ab = m.schedule.alpha_bar[static_cast<std::size_t>(t - 1)];
        const double ab_prev = s > 0 ? m.schedule.alpha_bar[static_cast<std::size_t>(ts[static_cast<std::size_t>(s - 1)] - 1)] : 1.0;
        const double alpha = ab / ab_prev;
        const double beta = 1.0 - alpha;
        const std::vector<int> tv{t};
        const nn::Matrix eu = nn::predict(m.net, diffusion_input(z, tv, uncond));
        const nn::Matrix ec = w == 0.0 ? eu : nn::predict(m.net, diffusion_input(z, tv, cond));
        const nn::Matrix e = eu + w * (ec - eu);
        z = (z - beta / std::sqrt(1.0 - ab) * e) / std::sqrt(alpha);
        if (s > 0) {
            const double sigma = std::sqrt(beta * (1.0 - ab_prev) / (1.0 - ab));
            for (int k = 0; k < kModalDim; ++k) z(0, k) += sigma * rng.normal();
        }
    }
    return z.row(0).transpose().cwiseMax(-1.0).cwiseMin(1.0);
}

} // namespace detail

/// Ancestral DDPM sampling with eps = eps_u + w (eps_c - eps_u), one row per
/// condition. Rows are sampled one at a time from Rng(seeds[i]), so results
/// are bit-identical however queries are batched. With steps < T the schedule
/// is respaced.
inline nn::Matrix sample_diffusion(const DiffusionModel& m, const nn::Matrix& cond, double w, int steps,
                                   const std::vector<std::uint64_t>& seeds) {
    const int T = m.schedule.steps();
    if (steps < 1 || steps > T) throw ArgumentError("sampling steps must lie in [1, T]");
    if (static_cast<std::size_t>(cond.rows()) != seeds.size()) throw ArgumentError("one seed per condition required");
    if (cond.cols() != kConditionDim) throw ArgumentError("conditions must have 96 columns");
    std::vector<int> ts; // respaced timesteps, ascending
    for (int i = 0; i < steps; ++i)
        ts.push_back(steps == 1 ? T : 1 + static_cast<int>(std::lround(static_cast<double>(i) * (T - 1) / (steps - 1))));
    nn::Matrix out(cond.rows(), kModalDim);
    for (Eigen::Index i = 0; i < cond.rows(); ++i) {
        Rng rng(derive_seed(seeds[static_cast<std::size_t>(i)], 0x5a3b1e));
        out.row(i) = detail::sample_row(m, cond.row(i), w, ts, rng).transpose();
    }
    return out;
}

inline ModalVector sample_diffusion(const DiffusionModel& m, const Eigen::VectorXd& cond, double w, int steps,
                                    std::uint64_t seed) {
    const nn::Matrix c = cond.transpose();
    return sample_diffusion(m, c, w, steps, std::vector<std::uint64_t>{seed}).row(0).transpose();
}

// ---------------------------------------------------------------------------
// Backends

class SoundBackend {
public:
    virtual ~SoundBackend() = default;
    virtual std::string name() const = 0;
    /// Normalized modal vectors, one row per condition row. Row i depends only
    /// on conditions.row(i) and seeds[i].
    virtual nn::Matrix predict(const nn::Matrix& conditions, const std::vector<std::uint64_t>& seeds) const = 0;
};

class RegressionBackend final : public SoundBackend {
public:
    explicit RegressionBackend(nn::DenseNet net) : net_(std::move(net)) {}
    std::string name() const override { return "regression"; }
    nn::Matrix predict(const nn::Matrix& conditions, const std::vector<std::uint64_t>&) const override {
        nn::Matrix out(conditions.rows(), kModalDim);
        for (Eigen::Index i = 0; i < conditions.rows(); ++i) out.row(i) = nn::predict(net_, conditions.row(i));
        return out;
    }

private:
    nn::DenseNet net_;
};

class DiffusionBackend final : public SoundBackend {
public:
    DiffusionBackend(DiffusionModel model, double guidance = kGuidanceScale, int steps = kDiffusionSteps)
        : model_(std::move(model)), guidance_(guidance), steps_(steps) {}
    std::string name() const override { return "diffusion"; }
    nn::Matrix predict(const nn::Matrix& conditions, const std::vector<std::uint64_t>& seeds) const override {
        return sample_diffusion(model_, conditions, guidance_, steps_, seeds);
    }

private:
    DiffusionModel model_;
    double guidance_;
    int steps_;
};

/// Modal vector -> standardized clip. Strength is fixed at 1 since
/// standardization removes it.
inline AudioClip synthesize_modal(const ModalVector& z, const ModalBounds& bounds, std::uint64_t seed) {
    return standardize(modal_synthesize(denormalize_modal(z, bounds), 1.0, seed));
}

/// query_features -> condition -> backend -> denormalize -> synthesize -> standardize.
inline AudioClip generate_sound(const Scene& scene, const FeatureField& field, const SoundBackend& backend,
                                const ModalBounds& bounds, const Camera& cam, const Vec2& pixel, std::uint64_t seed) {
    const Eigen::VectorXd c = make_condition(query_features(field, scene, cam, pixel));
    const nn::Matrix z = backend.predict(c.transpose(), {seed});
    return synthesize_modal(z.row(0).transpose(), bounds, seed);
}

// ---------------------------------------------------------------------------
// Evaluation against recorded clips

inline const ImpactEvent& event_by_id(const std::vector<ImpactEvent>& events, int id) {
    for (const auto& e : events)
        if (e.event_id == id) return e;
    throw ArgumentError("no event with id " + std::to_string(id));
}

/// Replaces each row's condition with the patch-local ablation condition
/// computed on the event's clean image.
inline GenerationData with_local_conditions(GenerationData d, const Scene& scene, const Encoder& visual,
                                            const std::vector<ImpactEvent>& events, int threads = 1) {
    parallel_for(d.event_ids.size(), threads, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            const ImpactEvent& e = event_by_id(events, d.event_ids[i]);
            const Image img = e.clean.pixel_count() > 0 ? e.clean : rasterize(scene, e.camera).rgb;
            d.conditions.row(static_cast<Eigen::Index>(i)) = local_condition(visual, img, e.marker_pixel).transpose();
        }
    });
    return d;
}

struct ReferenceAudio {
    Eigen::MatrixXd embeddings; ///< one audio-encoder embedding per row
    std::vector<Eigen::MatrixXd> mels;
};

inline ReferenceAudio reference_audio(const Encoder& audio, const std::vector<AudioClip>& clips) {
    ReferenceAudio r;
    r.embeddings.resize(static_cast<Eigen::Index>(clips.size()), kEmbeddingDim);
    for (std::size_t i = 0; i < clips.size(); ++i) {
        r.embeddings.row(static_cast<Eigen::Index>(i)) = encode_audio(audio, clips[i]).transpose();
        r.mels.push_back(mel_spectrogram(clips[i]).values);
    }
    return r;
}

/// Recorded clips of the rows of `d`, in row order.
inline std::vector<AudioClip> recorded_clips(const GenerationData& d, const std::vector<ImpactEvent>& events) {
    std::vector<AudioClip> out;
    for (int id : d.event_ids) out.push_back(event_by_id(events, id).audio);
    return out;
}

inline std::vector<std::uint64_t> query_seeds(std::size_t n, std::uint64_t seed) {
    std::vector<std::uint64_t> s(n);
    for (std::size_t i = 0; i < n; ++i) s[i] = derive_seed(seed, i);
    return s;
}

/// Synthesizes one clip per predicted row, in parallel.
inline std::vector<AudioClip> synthesize_rows(const nn::Matrix& z, const ModalBounds& bounds,
                                              const std::vector<std::uint64_t>& seeds, int threads = 1) {
    std::vector<AudioClip> clips(static_cast<std::size_t>(z.rows()));
    parallel_for(clips.size(), threads, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i)
            clips[i] = synthesize_modal(z.row(static_cast<Eigen::Index>(i)).transpose(), bounds, seeds[i]);
    });
    return clips;
}

/// Runs `backend` on the condition rows, batching sampling across threads.
inline nn::Matrix predict_rows(const SoundBackend& backend, const nn::Matrix& conditions,
                               const std::vector<std::uint64_t>& seeds, int threads = 1) {
    nn::Matrix z(conditions.rows(), kModalDim);
    parallel_for(static_cast<std::size_t>(conditions.rows()), threads, [&](std::size_t begin, std::size_t end) {
        const auto b = static_cast<Eigen::Index>(begin);
        const auto n = static_cast<Eigen::Index>(end - begin);
        const std::vector<std::uint64_t> s(seeds.begin() + static_cast<std::ptrdiff_t>(begin),
                                           seeds.begin() + static_cast<std::ptrdiff_t>(end));
        z.middleRows(b, n) = backend.predict(conditions.middleRows(b, n), s);
    });
    return z;
}

inline SystemMetrics evaluate_clips(const std::string& name, const Encoder& audio, const ReferenceAudio& truth,
                                    const std::vector<AudioClip>& generated) {
    const ReferenceAudio gen = reference_audio(audio, generated);
    return evaluate_system(name, truth.embeddings, gen.embeddings, truth.mels, gen.mels);
}

// ---------------------------------------------------------------------------
// Persistence

inline nn::Checkpoint to_checkpoint(const DiffusionModel& m, const DiffusionConfig& cfg) {
    nn::Checkpoint ck;
    ck.nets.emplace_back("eps", m.net);
    ck.metadata = {{"kind", "vaf-diffusion"},
                   {"null_token", vector_to_json(m.null_token)},
                   {"timesteps", cfg.timesteps},
                   {"beta_1", cfg.beta_1},
                   {"beta_T", cfg.beta_T}};
    return ck;
}

inline DiffusionModel diffusion_from_checkpoint(const nn::Checkpoint& ck) {
    if (ck.metadata.value("kind", "") != "vaf-diffusion") throw ParseError("checkpoint does not hold a diffusion model", 0);
    DiffusionModel m;
    m.net = ck.net("eps");
    m.null_token = vector_from_json(ck.metadata.at("null_token"));
    m.schedule = linear_schedule(ck.metadata.at("timesteps").get<int>(), ck.metadata.at("beta_1").get<double>(),
                                 ck.metadata.at("beta_T").get<double>());
    return m;
}

} // namespace vaf
