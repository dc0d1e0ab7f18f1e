#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include "vaf/error.hpp"

namespace vaf {

inline constexpr double kCovarianceShrinkage = 1e-6;
inline constexpr double kKlSmoothing = 1e-10;
inline constexpr int kSsimWindow = 7;
inline constexpr double kPsnrCap = 100.0;

// ---------------------------------------------------------------------------
// Frechet distance between Gaussian fits

struct GaussianStats {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
    std::size_t count = 0;
};

/// Rows are samples. Unbiased covariance plus 1e-6 I.
inline GaussianStats gaussian_stats(const Eigen::MatrixXd& samples, double shrinkage = kCovarianceShrinkage) {
    if (samples.rows() < 1) throw ArgumentError("need at least one sample");
    GaussianStats s;
    s.count = static_cast<std::size_t>(samples.rows());
    s.mean = samples.colwise().mean().transpose();
    const Eigen::MatrixXd c = samples.rowwise() - s.mean.transpose();
    const double denom = samples.rows() > 1 ? static_cast<double>(samples.rows() - 1) : 1.0;
    s.cov = c.transpose() * c / denom;
    s.cov = 0.5 * (s.cov + s.cov.transpose());
    s.cov.diagonal().array() += shrinkage;
    return s;
}

/// Principal square root of a symmetric matrix; negative eigenvalues clamp to 0.
inline Eigen::MatrixXd sqrt_psd(const Eigen::MatrixXd& m) {
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
    const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

/// |mu_a - mu_b|^2 + Tr(Sa + Sb - 2 (Sa^1/2 Sb Sa^1/2)^1/2)
inline double fad(const GaussianStats& a, const GaussianStats& b) {
    if (a.mean.size() != b.mean.size() || a.cov.rows() != b.cov.rows()) throw ArgumentError("statistics differ in dimension");
    const Eigen::MatrixXd ra = sqrt_psd(a.cov);
    const Eigen::MatrixXd cross = sqrt_psd(ra * b.cov * ra);
    const double d = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() - 2.0 * cross.trace();
    return std::max(d, 0.0);
}

// ---------------------------------------------------------------------------
// Paired KL over softmaxed mel cells

/// KL(p || q) with additive smoothing inside the log.
inline double kl_divergence(const Eigen::VectorXd& p, const Eigen::VectorXd& q, double eps = kKlSmoothing) {
    if (p.size() != q.size()) throw ArgumentError("distributions differ in size");
    double kl = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i) kl += p(i) * std::log((p(i) + eps) / (q(i) + eps));
    return std::max(kl, 0.0);
}

inline Eigen::VectorXd softmax_cells(const Eigen::MatrixXd& m) {
    const Eigen::VectorXd v = m.reshaped();
    const Eigen::VectorXd e = (v.array() - v.maxCoeff()).exp().matrix();
    return e / e.sum();
}

inline double kl_paired(const std::vector<Eigen::MatrixXd>& gt, const std::vector<Eigen::MatrixXd>& gen) {
    if (gt.size() != gen.size()) throw ArgumentError("paired KL needs equal counts");
    if (gt.empty()) throw ArgumentError("paired KL needs at least one pair");
    double total = 0.0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        if (gt[i].rows() != gen[i].rows() || gt[i].cols() != gen[i].cols()) throw ArgumentError("paired spectrograms differ in shape");
        total += kl_divergence(softmax_cells(gt[i]), softmax_cells(gen[i]));
    }
    return total / static_cast<double>(gt.size());
}

// ---------------------------------------------------------------------------
// Image metrics on log-mel spectrograms

inline double dynamic_range(const Eigen::MatrixXd& a) { return std::max(a.maxCoeff() - a.minCoeff(), 1e-6); }

struct SsimConstants {
    double k1 = 0.01;
    double k2 = 0.03;
};

/// Mean SSIM over all 7x7 windows fully inside the image (uniform weights,
/// population moments). L comes from `a`.
inline double ssim(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, SsimConstants k = {}) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw ArgumentError("SSIM inputs differ in shape");
    if (a.rows() < kSsimWindow || a.cols() < kSsimWindow) throw ArgumentError("SSIM inputs smaller than the window");
    const double L = dynamic_range(a);
    const double c1 = (k.k1 * L) * (k.k1 * L);
    const double c2 = (k.k2 * L) * (k.k2 * L);
    const double n = kSsimWindow * kSsimWindow;
    double total = 0.0;
    int windows = 0;
    for (Eigen::Index r = 0; r + kSsimWindow <= a.rows(); ++r)
        for (Eigen::Index c = 0; c + kSsimWindow <= a.cols(); ++c) {
            const auto x = a.block(r, c, kSsimWindow, kSsimWindow).array();
            const auto y = b.block(r, c, kSsimWindow, kSsimWindow).array();
            const double mx = x.sum() / n;
            const double my = y.sum() / n;
            const double vx = (x - mx).square().sum() / n;
            const double vy = (y - my).square().sum() / n;
            const double cxy = ((x - mx) * (y - my)).sum() / n;
            total += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            ++windows;
        }
    return total / windows;
}

inline double psnr(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw ArgumentError("PSNR inputs differ in shape");
    const double mse = (a - b).squaredNorm() / static_cast<double>(a.size());
    if (mse < 1e-12) return kPsnrCap;
    const double L = dynamic_range(a);
    return std::min(kPsnrCap, 10.0 * std::log10(L * L / mse));
}

// ---------------------------------------------------------------------------
// Report

struct SystemMetrics {
    std::string name;
    double fad = 0.0;
    double kl = 0.0;
    double ssim = 0.0;
    double psnr = 0.0;
    int count = 0;
};

/// FAD over embedding rows plus mean paired KL, SSIM and PSNR over log-mels.
inline SystemMetrics evaluate_system(const std::string& name, const Eigen::MatrixXd& gt_embeddings,
                                     const Eigen::MatrixXd& gen_embeddings, const std::vector<Eigen::MatrixXd>& gt_mels,
                                     const std::vector<Eigen::MatrixXd>& gen_mels) {
    if (gt_mels.size() != gen_mels.size() || gt_mels.empty()) throw ArgumentError("system evaluation needs paired clips");
    SystemMetrics m;
    m.name = name;
    m.count = static_cast<int>(gt_mels.size());
    m.fad = fad(gaussian_stats(gt_embeddings), gaussian_stats(gen_embeddings));
    m.kl = kl_paired(gt_mels, gen_mels);
    for (std::size_t i = 0; i < gt_mels.size(); ++i) {
        m.ssim += ssim(gt_mels[i], gen_mels[i]) / m.count;
        m.psnr += psnr(gt_mels[i], gen_mels[i]) / m.count;
    }
    return m;
}

inline nlohmann::json to_json(const SystemMetrics& m) {
    return {{"fad", m.fad}, {"kl", m.kl}, {"ssim", m.ssim}, {"psnr", m.psnr}, {"count", m.count}};
}

inline nlohmann::json metrics_report(const std::vector<SystemMetrics>& systems) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& s : systems) j[s.name] = to_json(s);
    return j;
}

} // namespace vaf
