#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <numbers>
#include <random>

#include "vaf/audio.hpp"

using namespace vaf;

namespace {

constexpr double kPi = std::numbers::pi;

MaterialModal single_mode(double f, double d, double a = 1.0) {
    MaterialModal m;
    m.name = "test";
    m.modes = {Mode{f, d, a}};
    return m;
}

/// Naive O(N^2) DFT of one windowed frame, used to cross-check the FFT path.
std::vector<std::complex<double>> naive_dft(const std::vector<double>& x) {
    const std::size_t n = x.size();
    std::vector<std::complex<double>> out(n / 2 + 1);
    for (std::size_t k = 0; k < out.size(); ++k)
        for (std::size_t t = 0; t < n; ++t)
            out[k] += x[t] * std::polar(1.0, -2.0 * kPi * static_cast<double>(k * t) / static_cast<double>(n));
    return out;
}

std::vector<double> white_noise(std::size_t n, double sigma, unsigned seed) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> dist(0.0, sigma);
    std::vector<double> v(n);
    for (auto& s : v) s = dist(gen);
    return v;
}

double energy(std::span<const double> x) {
    double e = 0.0;
    for (double v : x) e += v * v;
    return e;
}

double relative_l2(std::span<const double> a, std::span<const double> b) {
    double num = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) num += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(num / energy(b));
}

} // namespace

TEST(ModalSynthesize, PureTone) {
    const std::vector<double> phase{0.0};
    const AudioClip clip = modal_synthesize(single_mode(440, 0), 1.0, phase);
    ASSERT_EQ(clip.samples.size(), 8000u);
    EXPECT_EQ(clip.samples[0], 0.0);
    for (int n = 0; n < 8000; n += 37)
        EXPECT_NEAR(clip.samples[static_cast<std::size_t>(n)], std::sin(2 * kPi * 440 * n / 16000.0), 1e-12);
    EXPECT_FALSE(clip.standardized);
}

TEST(ModalSynthesize, ExponentialDecay) {
    // With phase pi/2 the carrier equals 1 at t = 0 and t = 0.125 s (55 full cycles).
    const std::vector<double> phase{kPi / 2};
    const AudioClip clip = modal_synthesize(single_mode(440, 8), 1.0, phase);
    EXPECT_NEAR(clip.samples[2000] / clip.samples[0], std::exp(-1.0), 1e-3);
}

TEST(ModalSynthesize, SpectrumPeaksAtModeFrequencies) {
    MaterialModal m;
    m.modes = {Mode{500, 6, 1.0}, Mode{1230, 8, 0.7}, Mode{2710, 10, 0.5}};
    const AudioClip clip = modal_synthesize(m, 1.0, 3);
    const Stft s = stft(clip);
    Eigen::VectorXd mag = s.frames.cwiseAbs().colwise().sum().transpose();
    std::vector<int> peaks;
    for (int k = 0; k < 3; ++k) {
        Eigen::Index best = 0;
        mag.maxCoeff(&best);
        peaks.push_back(static_cast<int>(best));
        for (Eigen::Index j = std::max<Eigen::Index>(0, best - 6); j <= std::min<Eigen::Index>(mag.size() - 1, best + 6); ++j) mag(j) = 0;
    }
    std::sort(peaks.begin(), peaks.end());
    for (std::size_t k = 0; k < 3; ++k) {
        const double expected_bin = m.modes[k].frequency * kFftSize / kSampleRate;
        EXPECT_LE(std::abs(peaks[k] - expected_bin), 1.0) << "mode " << k;
    }
}

TEST(ModalSynthesize, DeterministicPerSeedAndScalesWithStrength) {
    const auto& wood = palette_material(1).modal;
    const AudioClip a = modal_synthesize(wood, 1.0, 11);
    const AudioClip b = modal_synthesize(wood, 1.0, 11);
    const AudioClip c = modal_synthesize(wood, 2.0, 11);
    EXPECT_EQ(a.samples, b.samples);
    for (std::size_t i = 0; i < a.samples.size(); i += 101) EXPECT_NEAR(c.samples[i], 2 * a.samples[i], 1e-12);
    EXPECT_THROW(modal_synthesize(wood, 0.0, 11), ArgumentError);
    EXPECT_THROW(modal_synthesize(wood, 2.5, 11), ArgumentError);
}

TEST(ModalSynthesize, UndampedModeHasConstantFrameRms) {
    const std::vector<double> phase{0.3};
    const AudioClip clip = modal_synthesize(single_mode(440, 0), 1.0, phase);
    std::vector<double> rms;
    for (std::size_t f = 0; f + 512 <= clip.samples.size(); f += 512)
        rms.push_back(std::sqrt(energy(std::span(clip.samples).subspan(f, 512)) / 512));
    for (std::size_t i = 1; i < rms.size(); ++i) EXPECT_NEAR(rms[i] / rms[1], 1.0, 0.05);
}

TEST(Stft, RoundTripRandomSignal) {
    for (std::size_t len : {8000u, 1000u, 777u}) {
        const auto x = white_noise(len, 1.0, static_cast<unsigned>(len));
        const AudioClip y = istft(stft(x));
        ASSERT_EQ(y.samples.size(), len);
        EXPECT_LT(relative_l2(y.samples, x), 1e-6);
    }
}

TEST(Stft, FrameGeometry) {
    const auto x = white_noise(8000, 1.0, 1);
    const Stft s = stft(x);
    EXPECT_EQ(s.frames.rows(), 65);
    EXPECT_EQ(s.frames.cols(), 257);
    Stft bad = s;
    bad.frames.conservativeResize(64, Eigen::NoChange);
    EXPECT_THROW(istft(bad), ArgumentError);
    bad = s;
    bad.frames.conservativeResize(Eigen::NoChange, 256);
    EXPECT_THROW(istft(bad), ArgumentError);
    EXPECT_THROW(stft(std::vector<double>(100, 0.0)), ArgumentError);
}

TEST(Stft, MatchesNaiveDft) {
    const auto x = white_noise(2000, 1.0, 2);
    const Stft s = stft(x);
    // Frame 4 starts at 4*125 in the padded signal, i.e. original index 500-256.
    std::vector<double> frame(512);
    for (int n = 0; n < 512; ++n)
        frame[static_cast<std::size_t>(n)] = x[static_cast<std::size_t>(244 + n)] * (0.5 - 0.5 * std::cos(2 * kPi * n / 512));
    const auto ref = naive_dft(frame);
    for (int k = 0; k < 257; ++k) EXPECT_LT(std::abs(s.frames(4, k) - ref[static_cast<std::size_t>(k)]), 1e-9);
}

TEST(Stft, ToneEnergyInOneBin) {
    std::vector<double> x(8000);
    for (std::size_t n = 0; n < x.size(); ++n) x[n] = std::sin(2 * kPi * 1000 * static_cast<double>(n) / 16000);
    const Stft s = stft(x);
    const int bin = static_cast<int>(std::lround(1000.0 * 512 / 16000)); // 32
    for (Eigen::Index f = 2; f < s.frames.rows() - 2; ++f) {
        const Eigen::VectorXd p = s.frames.row(f).cwiseAbs2().transpose();
        Eigen::Index arg = 0;
        p.maxCoeff(&arg);
        EXPECT_EQ(arg, bin);
        EXPECT_GT(p.segment(bin - 1, 3).sum() / p.sum(), 0.95);
    }
}

TEST(Stft, ZeroSignalGivesZeroFrames) {
    const Stft s = stft(std::vector<double>(1000, 0.0));
    EXPECT_EQ(s.frames.cwiseAbs().maxCoeff(), 0.0);
}

TEST(SpectralGate, SilenceStaysSilent) {
    AudioClip silence;
    silence.samples.assign(8000, 0.0);
    const AudioClip out = spectral_gate(silence);
    for (double v : out.samples) EXPECT_EQ(v, 0.0);
}

TEST(SpectralGate, NullProfileIsIdentity) {
    const AudioClip clean = modal_synthesize(palette_material(3).modal, 1.0, 5);
    AudioClip quiet;
    quiet.samples.assign(2000, 0.0);
    const AudioClip out = spectral_gate(clean, &quiet);
    ASSERT_EQ(out.samples.size(), clean.samples.size());
    for (std::size_t i = 0; i < out.samples.size(); ++i) EXPECT_NEAR(out.samples[i], clean.samples[i], 1e-6);
}

TEST(SpectralGate, ImprovesSnrFromZeroDecibels) {
    // 0.1 s of leading noise (the recorder's pre-roll), then the strike.
    for (std::size_t material = 0; material < reference_palette().size(); ++material) {
        const AudioClip strike = modal_synthesize(palette_material(static_cast<int>(material)).modal, 1.0, 7);
        std::vector<double> clean(1600, 0.0);
        clean.insert(clean.end(), strike.samples.begin(), strike.samples.end());
        const double sigma = std::sqrt(energy(clean) / static_cast<double>(clean.size()));
        const auto noise = white_noise(clean.size(), sigma, 9);
        AudioClip noisy;
        noisy.samples.resize(clean.size());
        for (std::size_t i = 0; i < clean.size(); ++i) noisy.samples[i] = clean[i] + noise[i];
        const double snr_in = 10 * std::log10(energy(clean) / energy(noise));
        EXPECT_NEAR(snr_in, 0.0, 0.3);
        const AudioClip out = spectral_gate(noisy);
        std::vector<double> residual(clean.size());
        for (std::size_t i = 0; i < clean.size(); ++i) residual[i] = out.samples[i] - clean[i];
        const double snr_out = 10 * std::log10(energy(clean) / energy(residual));
        EXPECT_GE(snr_out, 10.0) << palette_material(static_cast<int>(material)).modal.name;
    }
}

TEST(SpectralGate, NeverAmplifies) {
    const auto x = white_noise(4000, 1.0, 4);
    const Stft s = stft(x);
    const Eigen::VectorXd profile = noise_profile(white_noise(1000, 0.7, 5));
    const Eigen::MatrixXcd gated = gate_spectrum(s.frames, profile);
    EXPECT_TRUE(((gated.cwiseAbs() - s.frames.cwiseAbs()).array() <= 0.0).all());
}

TEST(SpectralGate, ShortClipIsRejected) {
    AudioClip tiny;
    tiny.samples.assign(300, 0.1);
    EXPECT_THROW(spectral_gate(tiny), ArgumentError);
}

TEST(Standardize, CropsLongInput) {
    AudioClip clip = modal_synthesize(palette_material(2).modal, 1.0, 1, 16000);
    const AudioClip out = standardize(clip);
    EXPECT_EQ(out.samples.size(), 8000u);
    EXPECT_NEAR(out.rms(), 0.01, 1e-6);
    EXPECT_TRUE(out.standardized);
}

TEST(Standardize, PadsShortInputWithTrailingZeros) {
    const std::vector<double> phase{kPi / 2};
    const AudioClip clip = modal_synthesize(single_mode(300, 5), 1.0, phase, 3200);
    const AudioClip out = standardize(clip);
    ASSERT_EQ(out.samples.size(), 8000u);
    EXPECT_NE(out.samples[3199], 0.0);
    for (std::size_t i = 3200; i < 8000; ++i) ASSERT_EQ(out.samples[i], 0.0);
    EXPECT_NEAR(out.rms(), 0.01, 1e-6);
}

TEST(Standardize, AlignsOnset) {
    // 0.3 s of silence then a strike: output starts 10 ms before the onset.
    const AudioClip strike = modal_synthesize(palette_material(5).modal, 1.0, 2);
    AudioClip clip;
    clip.samples.assign(4800, 0.0);
    clip.samples.insert(clip.samples.end(), strike.samples.begin(), strike.samples.end());
    std::size_t onset = 0;
    double peak = 0;
    for (double v : clip.samples) peak = std::max(peak, std::abs(v));
    while (std::abs(clip.samples[onset]) <= 0.1 * peak) ++onset;
    const AudioClip out = standardize(clip);
    const double gain = out.samples[160] / clip.samples[onset];
    for (std::size_t i = 0; i < 1000; ++i) EXPECT_NEAR(out.samples[i], gain * clip.samples[onset - 160 + i], 1e-12);
}

TEST(Standardize, AnyNonSilentInputHasTargetRms) {
    for (unsigned seed = 0; seed < 20; ++seed) {
        AudioClip clip;
        clip.samples = white_noise(1000 + 700 * seed, std::pow(10.0, static_cast<double>(seed % 7) - 3.0), seed);
        EXPECT_NEAR(standardize(clip).rms(), 0.01, 1e-6);
    }
}

TEST(Standardize, Idempotent) {
    for (unsigned seed = 0; seed < 8; ++seed) {
        AudioClip clip = modal_synthesize(palette_material(static_cast<int>(seed)).modal, 0.5 + 0.1 * seed, seed, 9000);
        const auto noise = white_noise(clip.samples.size(), 0.01, seed);
        for (std::size_t i = 0; i < noise.size(); ++i) clip.samples[i] += noise[i];
        const AudioClip once = standardize(clip);
        const AudioClip twice = standardize(once);
        EXPECT_EQ(once.samples, twice.samples);
    }
}

TEST(Standardize, SilenceIsRejected) {
    AudioClip silence;
    silence.samples.assign(8000, 0.0);
    EXPECT_THROW(standardize(silence), NumericError);
}

TEST(Mel, FilterbankRowsArePositive) {
    const auto& fb = mel_filterbank();
    ASSERT_EQ(fb.rows(), 64);
    ASSERT_EQ(fb.cols(), 257);
    for (Eigen::Index r = 0; r < fb.rows(); ++r) EXPECT_GT(fb.row(r).sum(), 0.0) << "band " << r;
}

TEST(Mel, SilenceIsZero) {
    const MelSpectrogram m = mel_spectrogram(silent_clip());
    EXPECT_EQ(m.values.rows(), 64);
    EXPECT_EQ(m.values.cols(), 64);
    EXPECT_EQ(m.values.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Mel, MonotoneInScale) {
    const AudioClip clip = standardize(modal_synthesize(palette_material(1).modal, 1.0, 3));
    std::vector<double> doubled = clip.samples;
    for (double& v : doubled) v *= 2;
    const Eigen::MatrixXd a = log_mel(clip.samples);
    const Eigen::MatrixXd b = log_mel(doubled);
    EXPECT_TRUE((b.array() >= a.array()).all());
    EXPECT_TRUE(a.allFinite());
}

TEST(Mel, ToneLandsInItsBand) {
    const std::vector<double> phase{0.0};
    const AudioClip clip = standardize(modal_synthesize(single_mode(440, 0), 1.0, phase));
    const MelSpectrogram m = mel_spectrogram(clip);
    Eigen::Index arg = 0;
    m.values.rowwise().sum().maxCoeff(&arg);
    // Band centres: 66 points equally spaced on the HTK mel scale from 50 to 8000 Hz.
    auto mel = [](double f) { return 2595 * std::log10(1 + f / 700); };
    const double step = (mel(8000) - mel(50)) / 65;
    int nearest = 0;
    for (int b = 1; b < 64; ++b)
        if (std::abs(mel(50) + step * (b + 1) - mel(440)) < std::abs(mel(50) + step * (nearest + 1) - mel(440))) nearest = b;
    EXPECT_EQ(arg, nearest);
}

TEST(Mel, RequiresStandardizedClip) {
    AudioClip raw = modal_synthesize(palette_material(0).modal, 1.0, 1);
    EXPECT_THROW(mel_spectrogram(raw), ContractError);
}
