#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

#include <Eigen/Core>
#include <unsupported/Eigen/FFT>

#include "vaf/error.hpp"
#include "vaf/rng.hpp"
#include "vaf/scene.hpp"

namespace vaf {

inline constexpr int kSampleRate = 16000;
inline constexpr int kClipSamples = 8000; // 0.5 s
inline constexpr double kTargetRms = 0.01;
inline constexpr int kFftSize = 512;
inline constexpr int kHop = 125;
inline constexpr int kFftBins = kFftSize / 2 + 1;
inline constexpr int kMelBands = 64;
inline constexpr int kMelFrames = 64;
inline constexpr double kMelMinHz = 50.0;
inline constexpr double kMelMaxHz = 8000.0;
inline constexpr double kGateFactor = 1.5;
inline constexpr int kNoiseLeadSamples = kSampleRate / 20; // 50 ms
inline constexpr int kOnsetLeadSamples = kSampleRate / 100; // 10 ms

struct AudioClip {
    int sample_rate = kSampleRate;
    std::vector<double> samples;
    bool standardized = false;

    double rms() const {
        if (samples.empty()) return 0.0;
        double acc = 0.0;
        for (double s : samples) acc += s * s;
        return std::sqrt(acc / static_cast<double>(samples.size()));
    }
    double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
};

// ---------------------------------------------------------------------------
// Modal synthesis

/// s(t) = strength * sum_k a_k exp(-d_k t) sin(2 pi f_k t + phase_k).
inline AudioClip modal_synthesize(const MaterialModal& material, double strength, std::span<const double> phases,
                                  int samples = kClipSamples) {
    material.validate();
    if (phases.size() != material.modes.size()) throw ArgumentError("one phase per mode required");
    AudioClip clip;
    clip.samples.assign(static_cast<std::size_t>(samples), 0.0);
    for (std::size_t k = 0; k < material.modes.size(); ++k) {
        const Mode& m = material.modes[k];
        const double omega = 2.0 * std::numbers::pi * m.frequency;
        for (int n = 0; n < samples; ++n) {
            const double t = static_cast<double>(n) / kSampleRate;
            clip.samples[static_cast<std::size_t>(n)] +=
                strength * m.amplitude * std::exp(-m.damping * t) * std::sin(omega * t + phases[k]);
        }
    }
    return clip;
}

/// Phases drawn uniformly per seed. Output is 0.5 s, un-standardized.
inline AudioClip modal_synthesize(const MaterialModal& material, double strength, std::uint64_t seed,
                                  int samples = kClipSamples) {
    if (!(strength > 0.0 && strength <= 2.0)) throw ArgumentError("strike strength must lie in (0, 2]");
    Rng rng(derive_seed(seed, 0x70da1));
    std::vector<double> phases(material.modes.size());
    for (double& p : phases) p = rng.uniform(0.0, 2.0 * std::numbers::pi);
    return modal_synthesize(material, strength, phases, samples);
}

// ---------------------------------------------------------------------------
// STFT

/// Periodic Hann window.
inline const std::vector<double>& hann_window() {
    static const std::vector<double> w = [] {
        std::vector<double> v(kFftSize);
        for (int n = 0; n < kFftSize; ++n) v[static_cast<std::size_t>(n)] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / kFftSize);
        return v;
    }();
    return w;
}

/// Frames x bins complex spectrogram of a centered (reflect-padded) signal.
struct Stft {
    Eigen::MatrixXcd frames;
    std::size_t signal_length = 0;

    static std::size_t frame_count(std::size_t length) { return 1 + length / kHop; }
};

inline Stft stft(std::span<const double> x) {
    const std::size_t pad = kFftSize / 2;
    if (x.size() <= pad) throw ArgumentError("signal too short for a centered STFT");
    std::vector<double> padded(x.size() + 2 * pad);
    for (std::size_t i = 0; i < padded.size(); ++i) {
        const std::ptrdiff_t j = static_cast<std::ptrdiff_t>(i) - static_cast<std::ptrdiff_t>(pad);
        std::ptrdiff_t k = j;
        if (k < 0) k = -k;
        const auto last = static_cast<std::ptrdiff_t>(x.size()) - 1;
        if (k > last) k = 2 * last - k;
        padded[i] = x[static_cast<std::size_t>(k)];
    }
    Stft out;
    out.signal_length = x.size();
    const std::size_t frames = Stft::frame_count(x.size());
    out.frames.resize(static_cast<Eigen::Index>(frames), kFftBins);
    Eigen::FFT<double> fft;
    fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
    std::vector<double> buf(kFftSize);
    std::vector<std::complex<double>> spec;
    const auto& w = hann_window();
    for (std::size_t f = 0; f < frames; ++f) {
        for (int n = 0; n < kFftSize; ++n)
            buf[static_cast<std::size_t>(n)] = padded[f * kHop + static_cast<std::size_t>(n)] * w[static_cast<std::size_t>(n)];
        fft.fwd(spec, buf);
        for (int b = 0; b < kFftBins; ++b) out.frames(static_cast<Eigen::Index>(f), b) = spec[static_cast<std::size_t>(b)];
    }
    return out;
}

inline Stft stft(const AudioClip& clip) { return stft(std::span<const double>(clip.samples)); }

/// Weighted overlap-add inverse (divides by the summed squared window).
inline AudioClip istft(const Stft& s) {
    if (s.frames.cols() != kFftBins) throw ArgumentError("STFT frames have the wrong number of bins");
    if (static_cast<std::size_t>(s.frames.rows()) != Stft::frame_count(s.signal_length) || s.signal_length <= kFftSize / 2)
        throw ArgumentError("STFT frame count does not match the signal length");
    const std::size_t pad = kFftSize / 2;
    std::vector<double> acc(s.signal_length + 2 * pad + kFftSize, 0.0);
    std::vector<double> norm(acc.size(), 0.0);
    Eigen::FFT<double> fft;
    fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
    std::vector<std::complex<double>> spec(kFftBins);
    std::vector<double> buf;
    const auto& w = hann_window();
    for (Eigen::Index f = 0; f < s.frames.rows(); ++f) {
        for (int b = 0; b < kFftBins; ++b) spec[static_cast<std::size_t>(b)] = s.frames(f, b);
        fft.inv(buf, spec, kFftSize);
        const std::size_t start = static_cast<std::size_t>(f) * kHop;
        for (int n = 0; n < kFftSize; ++n) {
            const double wn = w[static_cast<std::size_t>(n)];
            acc[start + static_cast<std::size_t>(n)] += buf[static_cast<std::size_t>(n)] * wn;
            norm[start + static_cast<std::size_t>(n)] += wn * wn;
        }
    }
    AudioClip out;
    out.samples.resize(s.signal_length);
    for (std::size_t i = 0; i < s.signal_length; ++i) {
        const double nrm = norm[i + pad];
        out.samples[i] = nrm > 1e-12 ? acc[i + pad] / nrm : 0.0;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Spectral gating

/// Mean |STFT| per bin over all frames of a noise segment.
inline Eigen::VectorXd noise_profile(std::span<const double> noise) {
    if (noise.size() < static_cast<std::size_t>(kFftSize)) throw ArgumentError("noise segment shorter than one frame");
    const Stft s = stft(noise);
    return s.frames.cwiseAbs().colwise().mean().transpose();
}

/// Soft mask m = clamp((|X| - factor * profile) / |X|, 0, 1), applied per frame.
inline Eigen::MatrixXcd gate_spectrum(const Eigen::MatrixXcd& frames, const Eigen::VectorXd& profile,
                                      double factor = kGateFactor) {
    if (profile.size() != frames.cols()) throw ArgumentError("noise profile size does not match the spectrum");
    Eigen::MatrixXcd out = frames;
    for (Eigen::Index f = 0; f < frames.rows(); ++f)
        for (Eigen::Index b = 0; b < frames.cols(); ++b) {
            const double mag = std::abs(frames(f, b));
            const double mask = mag > 0.0 ? std::clamp((mag - factor * profile(b)) / mag, 0.0, 1.0) : 0.0;
            out(f, b) *= mask;
        }
    return out;
}

/// Spectral-gating denoiser. Without a dedicated noise recording, the first
/// 50 ms of the input serve as the noise estimate.
inline AudioClip spectral_gate(const AudioClip& noisy, const AudioClip* noise_sample = nullptr,
                               double factor = kGateFactor) {
    if (noisy.samples.size() < static_cast<std::size_t>(kFftSize)) throw ArgumentError("clip shorter than one STFT frame");
    const std::span<const double> noise =
        noise_sample ? std::span<const double>(noise_sample->samples)
                     : std::span<const double>(noisy.samples).first(std::min<std::size_t>(
                           std::max<std::size_t>(kNoiseLeadSamples, kFftSize), noisy.samples.size()));
    const Eigen::VectorXd profile = noise_profile(noise);
    Stft s = stft(noisy);
    s.frames = gate_spectrum(s.frames, profile, factor);
    AudioClip out = istft(s);
    out.sample_rate = noisy.sample_rate;
    return out;
}

// ---------------------------------------------------------------------------
// Standardization

/// Rescales to RMS 0.01 without cropping. Clips already at the target (within
/// 1e-12 relative) are returned unchanged so that standardization is idempotent.
inline AudioClip renormalize(const AudioClip& clip) {
    const double rms = clip.rms();
    if (!(rms > 1e-10)) throw NumericError("cannot RMS-normalize a silent clip");
    AudioClip out = clip;
    if (std::abs(rms - kTargetRms) > 1e-12 * kTargetRms) {
        const double gain = kTargetRms / rms;
        for (double& s : out.samples) s *= gain;
    }
    return out;
}

/// Onset-aligned crop/pad to 0.5 s, then RMS normalization to 0.01.
inline AudioClip standardize(const AudioClip& clip) {
    if (!(clip.rms() > 1e-10)) throw NumericError("cannot standardize a silent clip");
    double peak = 0.0;
    for (double s : clip.samples) peak = std::max(peak, std::abs(s));
    std::size_t onset = 0;
    while (onset < clip.samples.size() && !(std::abs(clip.samples[onset]) > 0.1 * peak)) ++onset;
    const std::size_t start = onset > static_cast<std::size_t>(kOnsetLeadSamples) ? onset - kOnsetLeadSamples : 0;
    AudioClip out;
    out.sample_rate = clip.sample_rate;
    out.samples.assign(kClipSamples, 0.0);
    for (std::size_t i = 0; i < static_cast<std::size_t>(kClipSamples) && start + i < clip.samples.size(); ++i)
        out.samples[i] = clip.samples[start + i];
    out = renormalize(out);
    out.standardized = true;
    return out;
}

/// A clip of exact silence cannot be RMS-normalized; it is still accepted as a
/// standardized clip so that downstream encoders have defined behavior on it.
inline AudioClip silent_clip() {
    AudioClip clip;
    clip.samples.assign(kClipSamples, 0.0);
    clip.standardized = true;
    return clip;
}

inline bool is_standardized(const AudioClip& clip) {
    if (!clip.standardized || clip.samples.size() != static_cast<std::size_t>(kClipSamples)) return false;
    const double rms = clip.rms();
    return rms == 0.0 || std::abs(rms - kTargetRms) <= 1e-6;
}

// ---------------------------------------------------------------------------
// Mel spectrogram

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// Triangular filter edges in Hz: kMelBands + 2 points equally spaced in mel.
inline std::vector<double> mel_edges_hz() {
    std::vector<double> edges(kMelBands + 2);
    const double lo = hz_to_mel(kMelMinHz);
    const double hi = hz_to_mel(kMelMaxHz);
    for (int i = 0; i < kMelBands + 2; ++i)
        edges[static_cast<std::size_t>(i)] = mel_to_hz(lo + (hi - lo) * i / (kMelBands + 1));
    return edges;
}

/// kMelBands x kFftBins triangular filterbank (HTK mel scale).
inline const Eigen::MatrixXd& mel_filterbank() {
    static const Eigen::MatrixXd fb = [] {
        const auto edges = mel_edges_hz();
        Eigen::MatrixXd m = Eigen::MatrixXd::Zero(kMelBands, kFftBins);
        for (int band = 0; band < kMelBands; ++band) {
            const double left = edges[static_cast<std::size_t>(band)];
            const double centre = edges[static_cast<std::size_t>(band) + 1];
            const double right = edges[static_cast<std::size_t>(band) + 2];
            for (int b = 0; b < kFftBins; ++b) {
                const double f = static_cast<double>(b) * kSampleRate / kFftSize;
                const double up = (f - left) / (centre - left);
                const double down = (right - f) / (right - centre);
                m(band, b) = std::max(0.0, std::min(up, down));
            }
        }
        return m;
    }();
    return fb;
}

struct MelSpectrogram {
    Eigen::MatrixXd values; // kMelBands x kMelFrames, log(1 + S)
};

/// log(1 + mel * |STFT|) over the first kMelFrames frames; no standardization check.
inline Eigen::MatrixXd log_mel(std::span<const double> samples) {
    const Stft s = stft(samples);
    if (s.frames.rows() < kMelFrames) throw ArgumentError("clip too short for a full mel spectrogram");
    const Eigen::MatrixXd mag = s.frames.topRows(kMelFrames).cwiseAbs().transpose(); // bins x frames
    return (mel_filterbank() * mag).array().log1p().matrix();
}

inline MelSpectrogram mel_spectrogram(const AudioClip& clip) {
    if (!is_standardized(clip)) throw ContractError("mel_spectrogram requires a standardized clip");
    return {log_mel(clip.samples)};
}

} // namespace vaf
