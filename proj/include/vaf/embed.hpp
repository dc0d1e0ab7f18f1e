#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "vaf/audio.hpp"
#include "vaf/capture.hpp"
#include "vaf/grid.hpp"
#include "vaf/nn.hpp"
#include "vaf/segmentation.hpp"

namespace vaf {

inline constexpr int kDescriptorDim = 77;
inline constexpr int kAudioFeatureDim = 2 * kMelBands;
inline constexpr int kEmbeddingDim = kFeatureDim;
inline constexpr int kThumbnailSize = 8;
inline constexpr double kMinTemperature = 0.01;
inline constexpr double kMaxTemperature = 1.0;

using Embedding = Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Raw features

/// 77 values: masked mean RGB (3), RGB covariance upper triangle (6),
/// normalized area (1), bounding-box aspect w/h (1), luminance mean and std
/// (2), 8x8 masked gray thumbnail of the bounding box (64).
inline Eigen::VectorXd region_descriptor(const Image& image, const std::vector<bool>& mask) {
    if (image.channels != 3) throw ArgumentError("region descriptor expects an RGB image");
    if (mask.size() != image.pixel_count()) throw ArgumentError("mask size does not match the image");
    int x0 = image.width, x1 = -1, y0 = image.height, y1 = -1;
    std::size_t n = 0;
    Vec3 mean = Vec3::Zero();
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x) {
            if (!mask[static_cast<std::size_t>(y) * image.width + x]) continue;
            ++n;
            mean += Vec3(image.at(x, y, 0), image.at(x, y, 1), image.at(x, y, 2));
            x0 = std::min(x0, x);
            x1 = std::max(x1, x);
            y0 = std::min(y0, y);
            y1 = std::max(y1, y);
        }
    if (n == 0) throw ArgumentError("region mask is empty");
    mean /= static_cast<double>(n);
    Mat3 cov = Mat3::Zero();
    double lum_sum = 0.0;
    double lum_sq = 0.0;
    const int bw = x1 - x0 + 1;
    const int bh = y1 - y0 + 1;
    std::array<double, kThumbnailSize * kThumbnailSize> thumb{};
    std::array<int, kThumbnailSize * kThumbnailSize> thumb_count{};
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            if (!mask[static_cast<std::size_t>(y) * image.width + x]) continue;
            const Vec3 c(image.at(x, y, 0), image.at(x, y, 1), image.at(x, y, 2));
            const Vec3 d = c - mean;
            cov += d * d.transpose();
            const double lum = 0.299 * c.x() + 0.587 * c.y() + 0.114 * c.z();
            lum_sum += lum;
            lum_sq += lum * lum;
            const int cx = (x - x0) * kThumbnailSize / bw;
            const int cy = (y - y0) * kThumbnailSize / bh;
            thumb[static_cast<std::size_t>(cy * kThumbnailSize + cx)] += lum;
            ++thumb_count[static_cast<std::size_t>(cy * kThumbnailSize + cx)];
        }
    cov /= static_cast<double>(n);
    const double lum_mean = lum_sum / static_cast<double>(n);
    const double lum_var = std::max(0.0, lum_sq / static_cast<double>(n) - lum_mean * lum_mean);

    Eigen::VectorXd d(kDescriptorDim);
    int k = 0;
    for (int c = 0; c < 3; ++c) d(k++) = mean(c);
    for (int r = 0; r < 3; ++r)
        for (int c = r; c < 3; ++c) d(k++) = cov(r, c);
    d(k++) = static_cast<double>(n) / static_cast<double>(image.pixel_count());
    d(k++) = static_cast<double>(bw) / static_cast<double>(bh);
    d(k++) = lum_mean;
    d(k++) = std::sqrt(lum_var);
    for (std::size_t i = 0; i < thumb.size(); ++i) d(k++) = thumb_count[i] ? thumb[i] / thumb_count[i] : 0.0;
    return d;
}

/// Per-mel-band mean and max over frames (128 values).
inline Eigen::VectorXd audio_features(const AudioClip& clip) {
    const MelSpectrogram mel = mel_spectrogram(clip);
    Eigen::VectorXd f(kAudioFeatureDim);
    f.head(kMelBands) = mel.values.rowwise().mean();
    f.tail(kMelBands) = mel.values.rowwise().maxCoeff();
    return f;
}

// ---------------------------------------------------------------------------
// Encoders

/// Standardize -> DenseNet -> L2 normalize.
struct Encoder {
    nn::DenseNet net;
    Eigen::VectorXd mean;
    Eigen::VectorXd scale;

    int input_dim() const { return net.input_dim(); }

    nn::Matrix standardize(const nn::Matrix& raw) const {
        if (raw.cols() != mean.size()) throw ArgumentError("raw feature dimension does not match the encoder");
        return (raw.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array();
    }

    /// Rows of `raw` to unit-norm embeddings.
    nn::Matrix embed(const nn::Matrix& raw) const { return normalize_rows(nn::predict(net, standardize(raw))); }

    Embedding embed_one(const Eigen::VectorXd& raw) const { return embed(raw.transpose()).row(0).transpose(); }

    static nn::Matrix normalize_rows(const nn::Matrix& z) {
        nn::Matrix y = z;
        for (Eigen::Index r = 0; r < z.rows(); ++r) {
            const double n = z.row(r).norm();
            if (n > 1e-12) {
                y.row(r) /= n;
            } else {
                y.row(r).setZero();
                y(r, 0) = 1.0;
            }
        }
        return y;
    }
};

inline Encoder make_encoder(int input_dim, int hidden, std::uint64_t seed) {
    Encoder e;
    e.net = nn::DenseNet({input_dim, hidden, kEmbeddingDim}, {nn::Activation::tanh, nn::Activation::identity}, seed);
    e.mean = Eigen::VectorXd::Zero(input_dim);
    e.scale = Eigen::VectorXd::Ones(input_dim);
    return e;
}

/// Per-column mean and std (floored) of a sample matrix.
inline void fit_standardization(Encoder& e, const nn::Matrix& raw) {
    e.mean = raw.colwise().mean().transpose();
    const nn::Matrix centered = raw.rowwise() - e.mean.transpose();
    e.scale = (centered.colwise().squaredNorm() / static_cast<double>(std::max<Eigen::Index>(raw.rows(), 1)))
                  .transpose()
                  .cwiseSqrt()
                  .cwiseMax(1e-6);
}

struct EncoderPair {
    Encoder visual;
    Encoder audio;
    double log_tau = std::log(0.07);

    double temperature() const { return std::exp(log_tau); }
};

inline Embedding encode_region(const Encoder& visual, const Image& image, const std::vector<bool>& mask) {
    return visual.embed_one(region_descriptor(image, mask));
}

inline Embedding encode_audio(const Encoder& audio, const AudioClip& clip) {
    if (!is_standardized(clip)) throw ContractError("encode_audio requires a standardized clip");
    return audio.embed_one(audio_features(clip));
}

// ---------------------------------------------------------------------------
// Symmetric InfoNCE

struct InfoNceResult {
    double loss = 0.0;
    nn::Matrix grad_visual; // dL/dV
    nn::Matrix grad_audio;  // dL/dA
    double grad_log_tau = 0.0;
};

/// L_ij = v_i . a_j / tau over unit rows; loss = (CE over rows + CE over
/// columns) / 2, averaged over the batch. With `groups`, the target of row i
/// is uniform over the pairs sharing its group and the target entropy is
/// subtracted (a KL divergence, 0 at the optimum); without, the target is the
/// diagonal and this is plain InfoNCE.
inline InfoNceResult infonce_loss(const nn::Matrix& v, const nn::Matrix& a, double tau,
                                  std::span<const int> groups = {}) {
    if (v.rows() != a.rows() || v.cols() != a.cols()) throw ArgumentError("visual and audio batches differ in shape");
    if (v.rows() < 2) throw ArgumentError("InfoNCE needs a batch of at least 2 pairs");
    if (!(tau > 0.0)) throw ArgumentError("temperature must be positive");
    const Eigen::Index n = v.rows();
    if (!groups.empty() && static_cast<Eigen::Index>(groups.size()) != n)
        throw ArgumentError("group labels do not match the batch");
    nn::Matrix target = nn::Matrix::Identity(n, n);
    if (!groups.empty())
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index j = 0; j < n; ++j)
                target(i, j) = groups[static_cast<std::size_t>(i)] == groups[static_cast<std::size_t>(j)] ? 1.0 : 0.0;
            target.row(i) /= target.row(i).sum();
        }
    const nn::Matrix logits = v * a.transpose() / tau;
    nn::Matrix p_row(n, n);
    nn::Matrix p_col(n, n);
    double loss = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double m = logits.row(i).maxCoeff();
        const Eigen::RowVectorXd e = (logits.row(i).array() - m).exp().matrix();
        const double s = e.sum();
        p_row.row(i) = e / s;
        const double entropy = std::log(1.0 / target(i, i));
        loss += 0.5 * (m + std::log(s) - target.row(i).dot(logits.row(i)) - entropy);
    }
    for (Eigen::Index j = 0; j < n; ++j) {
        const double m = logits.col(j).maxCoeff();
        const Eigen::VectorXd e = (logits.col(j).array() - m).exp().matrix();
        const double s = e.sum();
        p_col.col(j) = e / s;
        const double entropy = std::log(1.0 / target(j, j));
        loss += 0.5 * (m + std::log(s) - target.row(j).dot(logits.col(j).transpose()) - entropy);
    }
    InfoNceResult r;
    r.loss = loss / static_cast<double>(n);
    // target is symmetric, so the column targets are its columns.
    const nn::Matrix g = 0.5 * (p_row + p_col - 2.0 * target) / static_cast<double>(n);
    r.grad_visual = g * a / tau;
    r.grad_audio = g.transpose() * v / tau;
    r.grad_log_tau = -(g.cwiseProduct(logits)).sum();
    if (!std::isfinite(r.loss)) throw NumericError("non-finite InfoNCE loss");
    return r;
}

/// Back-propagates dL/dy through y = z / |z| row-wise.
inline nn::Matrix normalize_backward(const nn::Matrix& z, const nn::Matrix& grad_y) {
    nn::Matrix out(z.rows(), z.cols());
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
        const double n = std::max(z.row(r).norm(), 1e-12);
        const Eigen::RowVectorXd y = z.row(r) / n;
        out.row(r) = (grad_y.row(r) - y * y.dot(grad_y.row(r))) / n;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Training

/// One (region, sound) training pair with bookkeeping labels.
struct ContrastiveSample {
    Eigen::VectorXd descriptor;
    Eigen::VectorXd audio;
    int material = -1;
    int instance = -1;
    int event_id = -1;
};

/// Pairs each event's whole-object region in its clean image with its sound.
inline std::vector<ContrastiveSample> contrastive_samples(const Scene& scene, const std::vector<const ImpactEvent*>& events,
                                                          int threads = 1) {
    std::vector<ContrastiveSample> out(events.size());
    parallel_for(events.size(), threads, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            const ImpactEvent& e = *events[i];
            const Image clean = e.clean.empty() ? rasterize(scene, e.camera).rgb : e.clean;
            const SegmentMask mask = oracle_masks(scene, e.camera);
            const auto region = mask.region(Level::whole, e.labels.instance_id);
            if (std::none_of(region.begin(), region.end(), [](bool b) { return b; }))
                throw ContractError("event " + std::to_string(e.event_id) + " has an empty object mask");
            out[i].descriptor = region_descriptor(clean, region);
            out[i].audio = audio_features(e.audio);
            out[i].material = e.labels.material_id;
            out[i].instance = e.labels.instance_id;
            out[i].event_id = e.event_id;
        }
    });
    return out;
}

/// Extra visual samples: every segment, at every level, of every training
/// view, paired round-robin with the sound of a training event on the same
/// object. Objects without a training event are skipped.
inline std::vector<ContrastiveSample> view_region_samples(const Scene& scene, const std::vector<Camera>& views,
                                                          const std::vector<ContrastiveSample>& events,
                                                          int threads = 1) {
    std::map<int, std::vector<std::size_t>> by_instance;
    for (std::size_t i = 0; i < events.size(); ++i) by_instance[events[i].instance].push_back(i);
    std::vector<std::vector<ContrastiveSample>> per_view(views.size());
    parallel_for(views.size(), threads, [&](std::size_t begin, std::size_t end) {
        for (std::size_t v = begin; v < end; ++v) {
            const Image rgb = rasterize(scene, views[v]).rgb;
            const SegmentMask masks = oracle_masks(scene, views[v]);
            const LabelMap& whole = masks.level(Level::whole);
            for (int l = 0; l < kLevelCount; ++l)
                for (int id : masks.segments(static_cast<Level>(l))) {
                    const std::vector<bool> region = masks.region(static_cast<Level>(l), id);
                    const auto first = std::find(region.begin(), region.end(), true) - region.begin();
                    const int instance = whole.data[static_cast<std::size_t>(first)];
                    const auto it = by_instance.find(instance);
                    if (it == by_instance.end()) continue;
                    ContrastiveSample s;
                    s.descriptor = region_descriptor(rgb, region);
                    s.instance = instance;
                    per_view[v].push_back(std::move(s));
                }
        }
    });
    std::vector<ContrastiveSample> out;
    std::map<int, std::size_t> cursor;
    for (auto& samples : per_view)
        for (auto& s : samples) {
            const auto& pool = by_instance.at(s.instance);
            const ContrastiveSample& e = events[pool[cursor[s.instance]++ % pool.size()]];
            s.audio = e.audio;
            s.material = e.material;
            s.event_id = e.event_id;
            out.push_back(std::move(s));
        }
    return out;
}

/// Encoder training set: training events followed by training-view regions.
inline std::vector<ContrastiveSample> encoder_training_samples(const Scene& scene, const DatasetManifest& m,
                                                               int threads = 1) {
    std::vector<ContrastiveSample> out = contrastive_samples(scene, m.train(), threads);
    std::vector<ContrastiveSample> extra = view_region_samples(scene, m.views, out, threads);
    out.insert(out.end(), std::make_move_iterator(extra.begin()), std::make_move_iterator(extra.end()));
    return out;
}

struct ContrastiveConfig {
    int steps = 2000;
    int batch_size = 32;
    double learning_rate = 1e-3;
    double initial_temperature = 0.07;
    int hidden = 64;
    double input_noise = 0.3; ///< std of Gaussian noise added to standardized inputs
    bool material_positives = true; ///< same-material pairs count as positives
};

struct TrainLog {
    std::vector<double> loss;
    std::vector<double> temperature;

    std::string csv() const {
        std::ostringstream os;
        os.precision(17);
        os << "step,loss,tau\n";
        for (std::size_t i = 0; i < loss.size(); ++i) os << i << "," << loss[i] << "," << temperature[i] << "\n";
        return os.str();
    }
};

inline nn::Matrix stack_rows(const std::vector<ContrastiveSample>& samples, bool audio) {
    const int dim = audio ? kAudioFeatureDim : kDescriptorDim;
    nn::Matrix m(static_cast<Eigen::Index>(samples.size()), dim);
    for (std::size_t i = 0; i < samples.size(); ++i)
        m.row(static_cast<Eigen::Index>(i)) = (audio ? samples[i].audio : samples[i].descriptor).transpose();
    return m;
}

/// Freshly initialized encoders whose standardization is fitted to `samples`.
inline EncoderPair initial_encoders(const std::vector<ContrastiveSample>& samples, const ContrastiveConfig& cfg,
                                    std::uint64_t seed) {
    EncoderPair enc;
    enc.visual = make_encoder(kDescriptorDim, cfg.hidden, derive_seed(seed, 0x71));
    enc.audio = make_encoder(kAudioFeatureDim, cfg.hidden, derive_seed(seed, 0xa7));
    if (!samples.empty()) {
        fit_standardization(enc.visual, stack_rows(samples, false));
        fit_standardization(enc.audio, stack_rows(samples, true));
    }
    enc.log_tau = std::log(cfg.initial_temperature);
    return enc;
}

/// Joint Adam training of both encoders and the log-temperature.
inline std::pair<EncoderPair, TrainLog> train_contrastive(const std::vector<ContrastiveSample>& samples,
                                                          const ContrastiveConfig& cfg, std::uint64_t seed) {
    std::set<int> materials;
    for (const auto& s : samples) materials.insert(s.material);
    if (materials.size() < 2) throw ConfigError("contrastive training needs at least 2 materials");
    if (cfg.batch_size < 2 || cfg.steps < 1) throw ConfigError("invalid contrastive training configuration");

    EncoderPair enc = initial_encoders(samples, cfg, seed);
    const nn::Matrix vis_all = enc.visual.standardize(stack_rows(samples, false));
    const nn::Matrix aud_all = enc.audio.standardize(stack_rows(samples, true));
    const Eigen::Index nv = enc.visual.net.parameter_count();
    const Eigen::Index na = enc.audio.net.parameter_count();
    nn::Vector params(nv + na + 1);
    params << enc.visual.net.parameters(), enc.audio.net.parameters(), enc.log_tau;
    nn::Optimizer opt({nn::OptimizerKind::adam, cfg.learning_rate});
    Rng rng(derive_seed(seed, 0xba7c));
    const int batch = std::min<int>(cfg.batch_size, static_cast<int>(samples.size()));
    std::vector<std::size_t> order(samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::size_t cursor = order.size();
    TrainLog log;
    const double lo = std::log(kMinTemperature);
    const double hi = std::log(kMaxTemperature);
    for (int step = 0; step < cfg.steps; ++step) {
        nn::Matrix xv(batch, kDescriptorDim);
        nn::Matrix xa(batch, kAudioFeatureDim);
        std::vector<int> groups(static_cast<std::size_t>(batch));
        for (int b = 0; b < batch; ++b) {
            if (cursor == order.size()) {
                rng.shuffle(order);
                cursor = 0;
            }
            const std::size_t idx = order[cursor++];
            xv.row(b) = vis_all.row(static_cast<Eigen::Index>(idx));
            xa.row(b) = aud_all.row(static_cast<Eigen::Index>(idx));
            groups[static_cast<std::size_t>(b)] = samples[idx].material;
        }
        if (cfg.input_noise > 0.0) {
            for (Eigen::Index k = 0; k < xv.size(); ++k) xv.data()[k] += cfg.input_noise * rng.normal();
            for (Eigen::Index k = 0; k < xa.size(); ++k) xa.data()[k] += cfg.input_noise * rng.normal();
        }
        const auto [zv, tape_v] = nn::forward(enc.visual.net, xv);
        const auto [za, tape_a] = nn::forward(enc.audio.net, xa);
        const double tau = std::exp(enc.log_tau);
        const InfoNceResult r = infonce_loss(Encoder::normalize_rows(zv), Encoder::normalize_rows(za), tau,
                                             cfg.material_positives ? std::span<const int>(groups) : std::span<const int>());
        log.loss.push_back(r.loss);
        log.temperature.push_back(tau);
        const nn::Gradients gv = nn::backward(enc.visual.net, tape_v, normalize_backward(zv, r.grad_visual));
        const nn::Gradients ga = nn::backward(enc.audio.net, tape_a, normalize_backward(za, r.grad_audio));
        nn::Vector grads(params.size());
        grads << gv.flat(), ga.flat(), r.grad_log_tau;
        opt.step(params, grads);
        params(params.size() - 1) = std::clamp(params(params.size() - 1), lo, hi);
        enc.visual.net.set_parameters(params.head(nv));
        enc.audio.net.set_parameters(params.segment(nv, na));
        enc.log_tau = params(params.size() - 1);
    }
    return {enc, log};
}

// ---------------------------------------------------------------------------
// Retrieval audit

struct RetrievalResult {
    double accuracy = 0.0;
    double chance = 0.0; ///< expected accuracy of a uniformly random pick
    int queries = 0;
};

/// Audio -> region top-1 retrieval within `samples`; a hit is a region of the
/// query's material.
inline RetrievalResult retrieval_accuracy(const EncoderPair& enc, const std::vector<ContrastiveSample>& samples) {
    if (samples.empty()) throw ArgumentError("retrieval needs at least one sample");
    const nn::Matrix v = enc.visual.embed(stack_rows(samples, false));
    const nn::Matrix a = enc.audio.embed(stack_rows(samples, true));
    const nn::Matrix sim = a * v.transpose();
    RetrievalResult r;
    r.queries = static_cast<int>(samples.size());
    int hits = 0;
    double chance = 0.0;
    for (Eigen::Index q = 0; q < sim.rows(); ++q) {
        Eigen::Index best = 0;
        sim.row(q).maxCoeff(&best);
        if (samples[static_cast<std::size_t>(best)].material == samples[static_cast<std::size_t>(q)].material) ++hits;
        int same = 0;
        for (const auto& s : samples) same += s.material == samples[static_cast<std::size_t>(q)].material;
        chance += static_cast<double>(same) / static_cast<double>(samples.size());
    }
    r.accuracy = static_cast<double>(hits) / r.queries;
    r.chance = chance / r.queries;
    return r;
}

/// Mean retrieval accuracy of untrained encoders over `inits` random seeds.
inline RetrievalResult random_encoder_retrieval(const std::vector<ContrastiveSample>& fit_samples,
                                                const std::vector<ContrastiveSample>& eval_samples, int inits,
                                                std::uint64_t seed, const ContrastiveConfig& cfg = {}) {
    RetrievalResult mean;
    for (int i = 0; i < inits; ++i) {
        const EncoderPair enc = initial_encoders(fit_samples, cfg, derive_seed(seed, 0x7a4d0000ull + static_cast<std::uint64_t>(i)));
        const RetrievalResult r = retrieval_accuracy(enc, eval_samples);
        mean.accuracy += r.accuracy / inits;
        mean.chance = r.chance;
        mean.queries = r.queries;
    }
    return mean;
}

/// Wilson score interval for a binomial proportion.
inline std::pair<double, double> wilson_interval(double p, int n, double z = 1.96) {
    const double nn_ = static_cast<double>(n);
    const double denom = 1.0 + z * z / nn_;
    const double centre = (p + z * z / (2.0 * nn_)) / denom;
    const double half = z * std::sqrt(p * (1.0 - p) / nn_ + z * z / (4.0 * nn_ * nn_)) / denom;
    return {centre - half, centre + half};
}

// ---------------------------------------------------------------------------
// Persistence

inline nlohmann::json vector_to_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline Eigen::VectorXd vector_from_json(const nlohmann::json& j) {
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline nn::Checkpoint to_checkpoint(const EncoderPair& enc) {
    nn::Checkpoint ck;
    ck.nets.emplace_back("visual", enc.visual.net);
    ck.nets.emplace_back("audio", enc.audio.net);
    ck.metadata = {{"kind", "vaf-encoders"},
                   {"log_tau", enc.log_tau},
                   {"visual_mean", vector_to_json(enc.visual.mean)},
                   {"visual_scale", vector_to_json(enc.visual.scale)},
                   {"audio_mean", vector_to_json(enc.audio.mean)},
                   {"audio_scale", vector_to_json(enc.audio.scale)}};
    return ck;
}

inline EncoderPair encoders_from_checkpoint(const nn::Checkpoint& ck) {
    if (ck.metadata.value("kind", "") != "vaf-encoders") throw ParseError("checkpoint does not hold encoders", 0);
    EncoderPair enc;
    enc.visual.net = ck.net("visual");
    enc.audio.net = ck.net("audio");
    enc.log_tau = ck.metadata.at("log_tau").get<double>();
    enc.visual.mean = vector_from_json(ck.metadata.at("visual_mean"));
    enc.visual.scale = vector_from_json(ck.metadata.at("visual_scale"));
    enc.audio.mean = vector_from_json(ck.metadata.at("audio_mean"));
    enc.audio.scale = vector_from_json(ck.metadata.at("audio_scale"));
    return enc;
}

} // namespace vaf
