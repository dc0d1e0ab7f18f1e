#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "vaf/embed.hpp"

using namespace vaf;

namespace {

// Straight transcription of the symmetric contrastive loss, no shared code.
double naive_infonce(const nn::Matrix& v, const nn::Matrix& a, double tau) {
    const long n = v.rows();
    double rows = 0.0, cols = 0.0;
    for (long i = 0; i < n; ++i) {
        double sr = 0.0, sc = 0.0;
        for (long j = 0; j < n; ++j) {
            sr += std::exp(v.row(i).dot(a.row(j)) / tau);
            sc += std::exp(v.row(j).dot(a.row(i)) / tau);
        }
        const double pos = v.row(i).dot(a.row(i)) / tau;
        rows += std::log(sr) - pos;
        cols += std::log(sc) - pos;
    }
    return 0.5 * (rows + cols) / static_cast<double>(n);
}

nn::Matrix random_unit_rows(int n, int d, std::uint64_t seed) {
    Rng rng(seed);
    nn::Matrix m(n, d);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) m(i, j) = rng.normal();
    return Encoder::normalize_rows(m);
}

Image flat(double r, double g, double b) {
    Image img(16, 16, 3);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
            img.at(x, y, 0) = r;
            img.at(x, y, 1) = g;
            img.at(x, y, 2) = b;
        }
    return img;
}

std::vector<bool> rect_mask(int x0, int y0, int x1, int y1) {
    std::vector<bool> m(256, false);
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) m[static_cast<std::size_t>(y * 16 + x)] = true;
    return m;
}

struct Trained {
    std::vector<ContrastiveSample> train, test;
    EncoderPair enc;
    TrainLog log;
};

const Trained& trained() {
    static const Trained t = [] {
        Trained out;
        const Scene scene = build_scene(SceneConfig{}, 0);
        const DatasetManifest m = build_dataset(scene, DatasetConfig{}, 0, 8);
        out.train = contrastive_samples(scene, m.train(), 8);
        out.test = contrastive_samples(scene, m.test(), 8);
        std::tie(out.enc, out.log) = train_contrastive(encoder_training_samples(scene, m, 8), ContrastiveConfig{}, 0);
        return out;
    }();
    return t;
}

} // namespace

TEST(RegionDescriptor, UniformRectangle) {
    const Image img = flat(0.2, 0.4, 0.6);
    const Eigen::VectorXd d = region_descriptor(img, rect_mask(2, 3, 9, 6));
    ASSERT_EQ(d.size(), 77);
    EXPECT_NEAR(d(0), 0.2, 1e-12);
    EXPECT_NEAR(d(1), 0.4, 1e-12);
    EXPECT_NEAR(d(2), 0.6, 1e-12);
    for (int k = 3; k < 9; ++k) EXPECT_NEAR(d(k), 0.0, 1e-12);
    EXPECT_NEAR(d(9), 32.0 / 256.0, 1e-12);
    EXPECT_NEAR(d(10), 8.0 / 4.0, 1e-12);
    const double lum = 0.299 * 0.2 + 0.587 * 0.4 + 0.114 * 0.6;
    EXPECT_NEAR(d(11), lum, 1e-12);
    EXPECT_NEAR(d(12), 0.0, 1e-7);
    // 8x4 bounding box: every one of the 8 columns is hit, rows 0,2,4,6 only.
    for (int cy = 0; cy < 8; ++cy)
        for (int cx = 0; cx < 8; ++cx) EXPECT_NEAR(d(13 + cy * 8 + cx), cy % 2 == 0 ? lum : 0.0, 1e-12);
}

TEST(RegionDescriptor, TwoToneCovariance) {
    Image img = flat(0.0, 0.5, 0.5);
    for (int y = 0; y < 16; ++y)
        for (int x = 8; x < 16; ++x) img.at(x, y, 0) = 1.0;
    const Eigen::VectorXd d = region_descriptor(img, rect_mask(4, 0, 11, 15));
    EXPECT_NEAR(d(0), 0.5, 1e-12);
    EXPECT_NEAR(d(3), 0.25, 1e-12); // var(R) of a fair 0/1 split
    for (int k = 4; k < 9; ++k) EXPECT_NEAR(d(k), 0.0, 1e-12);
    EXPECT_NEAR(d(12), 0.299 * 0.5, 1e-12);
}

TEST(RegionDescriptor, RejectsEmptyMask) {
    EXPECT_THROW(region_descriptor(flat(1, 1, 1), std::vector<bool>(256, false)), ArgumentError);
    EXPECT_THROW(region_descriptor(flat(1, 1, 1), std::vector<bool>(10, true)), ArgumentError);
}

TEST(InfoNce, MatchesNaiveFormula) {
    const nn::Matrix v = random_unit_rows(7, 5, 1);
    const nn::Matrix a = random_unit_rows(7, 5, 2);
    for (double tau : {0.07, 0.3, 1.0}) EXPECT_NEAR(infonce_loss(v, a, tau).loss, naive_infonce(v, a, tau), 1e-10);
}

TEST(InfoNce, GradientsMatchFiniteDifferences) {
    const nn::Matrix v = random_unit_rows(6, 4, 3);
    const nn::Matrix a = random_unit_rows(6, 4, 4);
    const double tau = 0.2;
    const InfoNceResult r = infonce_loss(v, a, tau);
    const double h = 1e-6;
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 4; ++j) {
            nn::Matrix vp = v, vm = v, ap = a, am = a;
            vp(i, j) += h;
            vm(i, j) -= h;
            ap(i, j) += h;
            am(i, j) -= h;
            EXPECT_NEAR(r.grad_visual(i, j), (naive_infonce(vp, a, tau) - naive_infonce(vm, a, tau)) / (2 * h), 1e-6);
            EXPECT_NEAR(r.grad_audio(i, j), (naive_infonce(v, ap, tau) - naive_infonce(v, am, tau)) / (2 * h), 1e-6);
        }
    const double lt = std::log(tau);
    const double fd = (naive_infonce(v, a, std::exp(lt + h)) - naive_infonce(v, a, std::exp(lt - h))) / (2 * h);
    EXPECT_NEAR(r.grad_log_tau, fd, 1e-6);
}

TEST(InfoNce, PermutationEquivariant) {
    const nn::Matrix v = random_unit_rows(9, 6, 5);
    const nn::Matrix a = random_unit_rows(9, 6, 6);
    std::vector<int> perm(9);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(7);
    rng.shuffle(perm);
    nn::Matrix vp(9, 6), ap(9, 6);
    for (int i = 0; i < 9; ++i) {
        vp.row(i) = v.row(perm[static_cast<std::size_t>(i)]);
        ap.row(i) = a.row(perm[static_cast<std::size_t>(i)]);
    }
    const InfoNceResult r = infonce_loss(v, a, 0.1);
    const InfoNceResult rp = infonce_loss(vp, ap, 0.1);
    EXPECT_NEAR(r.loss, rp.loss, 1e-12);
    for (int i = 0; i < 9; ++i)
        EXPECT_LT((rp.grad_visual.row(i) - r.grad_visual.row(perm[static_cast<std::size_t>(i)])).norm(), 1e-12);
}

TEST(InfoNce, RandomEmbeddingsNearLogBatch) {
    double mean = 0.0;
    for (std::uint64_t s = 0; s < 20; ++s) mean += infonce_loss(random_unit_rows(32, 32, 10 + s), random_unit_rows(32, 32, 100 + s), 1.0).loss / 20;
    EXPECT_NEAR(mean, std::log(32.0), 0.15);
}

TEST(InfoNce, AlignedPairsApproachZero) {
    const nn::Matrix e = nn::Matrix::Identity(8, 8);
    EXPECT_LT(infonce_loss(e, e, 0.01).loss, 1e-6);
    EXPECT_GT(infonce_loss(e, e, 1.0).loss, 1.0);
}

TEST(InfoNce, RejectsDegenerateBatches) {
    EXPECT_THROW(infonce_loss(random_unit_rows(1, 4, 1), random_unit_rows(1, 4, 2), 0.07), ArgumentError);
    EXPECT_THROW(infonce_loss(random_unit_rows(3, 4, 1), random_unit_rows(4, 4, 2), 0.07), ArgumentError);
}

TEST(Encoders, NormalizeBackwardMatchesFiniteDifferences) {
    Rng rng(11);
    nn::Matrix z(3, 5), g(3, 5);
    for (int i = 0; i < 15; ++i) {
        z(i / 5, i % 5) = rng.normal();
        g(i / 5, i % 5) = rng.normal();
    }
    const nn::Matrix analytic = normalize_backward(z, g);
    const double h = 1e-6;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 5; ++j) {
            nn::Matrix zp = z, zm = z;
            zp(i, j) += h;
            zm(i, j) -= h;
            const double fd = ((Encoder::normalize_rows(zp) - Encoder::normalize_rows(zm)).cwiseProduct(g)).sum() / (2 * h);
            EXPECT_NEAR(analytic(i, j), fd, 1e-7);
        }
}

TEST(Encoders, OutputsAreUnitNorm) {
    const EncoderPair enc = initial_encoders({}, ContrastiveConfig{}, 3);
    EXPECT_NEAR(encode_region(enc.visual, flat(0.3, 0.2, 0.9), rect_mask(0, 0, 5, 5)).norm(), 1.0, 1e-12);
    const AudioClip tone = standardize(modal_synthesize(palette_material(2).modal, 1.0, std::uint64_t{4}));
    EXPECT_NEAR(encode_audio(enc.audio, tone).norm(), 1.0, 1e-12);
    const Embedding silent = encode_audio(enc.audio, silent_clip());
    EXPECT_TRUE(silent.allFinite());
    EXPECT_NEAR(silent.norm(), 1.0, 1e-12);
    AudioClip raw;
    raw.samples.assign(8000, 0.001);
    EXPECT_THROW(encode_audio(enc.audio, raw), ContractError);
}

TEST(Training, SingleMaterialIsRejected) {
    std::vector<ContrastiveSample> s(4);
    for (auto& x : s) {
        x.descriptor = Eigen::VectorXd::Zero(kDescriptorDim);
        x.audio = Eigen::VectorXd::Zero(kAudioFeatureDim);
        x.material = 3;
    }
    EXPECT_THROW(train_contrastive(s, ContrastiveConfig{}, 0), ConfigError);
}

TEST(Training, CheckpointRoundTrip) {
    const EncoderPair enc = initial_encoders({}, ContrastiveConfig{}, 9);
    const EncoderPair back = encoders_from_checkpoint(nn::decode_checkpoint(nn::encode_checkpoint(to_checkpoint(enc))));
    EXPECT_EQ(back.visual.net.parameters(), enc.visual.net.parameters());
    EXPECT_EQ(back.audio.net.parameters(), enc.audio.net.parameters());
    EXPECT_EQ(back.log_tau, enc.log_tau);
}

TEST(Training, ReferenceRetrievalAndLoss) {
    const Trained& t = trained();
    const RetrievalResult tr = retrieval_accuracy(t.enc, t.train);
    const RetrievalResult te = retrieval_accuracy(t.enc, t.test);
    const double initial = t.log.loss.front();
    double final_loss = 0.0;
    for (std::size_t i = t.log.loss.size() - 50; i < t.log.loss.size(); ++i) final_loss += t.log.loss[i] / 50.0;
    std::printf("train %.3f test %.3f loss %.3f -> %.3f tau %.4f\n", tr.accuracy, te.accuracy, initial, final_loss,
                t.enc.temperature());
    EXPECT_GE(tr.accuracy, 0.9);
    EXPECT_GE(te.accuracy, 0.7);
    EXPECT_LT(final_loss, 0.25 * initial);
    EXPECT_GE(t.enc.temperature(), kMinTemperature - 1e-12);
    EXPECT_LE(t.enc.temperature(), kMaxTemperature + 1e-12);
}

TEST(Training, RandomEncoderBaselineIsChance) {
    const Trained& t = trained();
    const RetrievalResult r = random_encoder_retrieval(t.train, t.test, 20, 5);
    const auto [lo, hi] = wilson_interval(r.chance, r.queries);
    std::printf("random %.3f chance %.3f [%.3f, %.3f]\n", r.accuracy, r.chance, lo, hi);
    EXPECT_GE(r.accuracy, lo);
    EXPECT_LE(r.accuracy, hi);
}

TEST(Training, TripletsOrderedByMaterial) {
    const Trained& t = trained();
    const auto& s = t.test;
    const nn::Matrix v = t.enc.visual.embed(stack_rows(s, false));
    const nn::Matrix a = t.enc.audio.embed(stack_rows(s, true));
    int total = 0, good_v = 0, good_a = 0;
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = 0; j < s.size(); ++j) {
            if (i == j || s[i].material != s[j].material) continue;
            for (std::size_t k = 0; k < s.size(); ++k) {
                if (s[k].material == s[i].material) continue;
                const auto I = static_cast<Eigen::Index>(i), J = static_cast<Eigen::Index>(j), K = static_cast<Eigen::Index>(k);
                ++total;
                good_v += (v.row(I) - v.row(J)).norm() < (v.row(I) - v.row(K)).norm();
                good_a += (a.row(I) - a.row(J)).norm() < (a.row(I) - a.row(K)).norm();
            }
        }
    ASSERT_GT(total, 0);
    std::printf("triplets visual %.3f audio %.3f\n", double(good_v) / total, double(good_a) / total);
    EXPECT_GE(static_cast<double>(good_v) / total, 0.9);
    EXPECT_GE(static_cast<double>(good_a) / total, 0.9);
}

namespace {

// Soft-target cross entropy minus target entropy, written out term by term.
double naive_grouped(const nn::Matrix& v, const nn::Matrix& a, double tau, const std::vector<int>& g) {
    const long n = v.rows();
    double total = 0.0;
    for (long i = 0; i < n; ++i) {
        int k = 0;
        for (long j = 0; j < n; ++j) k += g[i] == g[j];
        double sr = 0.0, sc = 0.0;
        for (long j = 0; j < n; ++j) {
            sr += std::exp(v.row(i).dot(a.row(j)) / tau);
            sc += std::exp(v.row(j).dot(a.row(i)) / tau);
        }
        for (long j = 0; j < n; ++j) {
            if (g[i] != g[j]) continue;
            const double q = 1.0 / k;
            const double pr = std::exp(v.row(i).dot(a.row(j)) / tau) / sr;
            const double pc = std::exp(v.row(j).dot(a.row(i)) / tau) / sc;
            total += 0.5 * q * (std::log(q / pr) + std::log(q / pc));
        }
    }
    return total / static_cast<double>(n);
}

} // namespace

TEST(InfoNce, GroupedTargetsMatchNaiveKl) {
    const nn::Matrix v = random_unit_rows(8, 5, 21);
    const nn::Matrix a = random_unit_rows(8, 5, 22);
    const std::vector<int> g{0, 1, 0, 2, 1, 0, 3, 2};
    const InfoNceResult r = infonce_loss(v, a, 0.15, g);
    EXPECT_NEAR(r.loss, naive_grouped(v, a, 0.15, g), 1e-10);
    const double h = 1e-6;
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 5; ++j) {
            nn::Matrix vp = v, vm = v, ap = a, am = a;
            vp(i, j) += h;
            vm(i, j) -= h;
            ap(i, j) += h;
            am(i, j) -= h;
            EXPECT_NEAR(r.grad_visual(i, j), (naive_grouped(vp, a, 0.15, g) - naive_grouped(vm, a, 0.15, g)) / (2 * h), 1e-6);
            EXPECT_NEAR(r.grad_audio(i, j), (naive_grouped(v, ap, 0.15, g) - naive_grouped(v, am, 0.15, g)) / (2 * h), 1e-6);
        }
    const double lt = std::log(0.15);
    EXPECT_NEAR(r.grad_log_tau,
                (naive_grouped(v, a, std::exp(lt + h), g) - naive_grouped(v, a, std::exp(lt - h), g)) / (2 * h), 1e-6);
}

TEST(InfoNce, DistinctGroupsReduceToPlainLoss) {
    const nn::Matrix v = random_unit_rows(6, 4, 31);
    const nn::Matrix a = random_unit_rows(6, 4, 32);
    const std::vector<int> g{5, 4, 3, 2, 1, 0};
    const InfoNceResult plain = infonce_loss(v, a, 0.3);
    const InfoNceResult grouped = infonce_loss(v, a, 0.3, g);
    EXPECT_NEAR(plain.loss, grouped.loss, 1e-12);
    EXPECT_LT((plain.grad_visual - grouped.grad_visual).norm(), 1e-12);
    EXPECT_THROW(infonce_loss(v, a, 0.3, std::vector<int>{1, 2}), ArgumentError);
}

TEST(InfoNce, CollapsedGroupsReachZero) {
    // Every member of a group shares one embedding on both sides.
    nn::Matrix v(6, 3);
    const std::vector<int> g{0, 0, 1, 1, 2, 2};
    for (int i = 0; i < 6; ++i) v.row(i) = nn::Matrix::Identity(3, 3).row(g[static_cast<std::size_t>(i)]);
    EXPECT_LT(infonce_loss(v, v, 0.01, g).loss, 1e-6);
}

TEST(Training, ViewRegionsBorrowSoundsOfTheSameObject) {
    const Scene scene = build_scene(SceneConfig{}, 0);
    DatasetConfig cfg;
    cfg.event_count = 30;
    cfg.view_count = 8;
    const DatasetManifest m = build_dataset(scene, cfg, 1, 4);
    const auto events = contrastive_samples(scene, m.train(), 4);
    const auto extra = view_region_samples(scene, m.views, events, 4);
    ASSERT_FALSE(extra.empty());
    std::map<int, const ContrastiveSample*> by_id;
    for (const auto& e : events) by_id[e.event_id] = &e;
    for (const auto& s : extra) {
        const ContrastiveSample& src = *by_id.at(s.event_id);
        EXPECT_EQ(s.instance, src.instance);
        EXPECT_EQ(s.material, src.material);
        EXPECT_EQ(s.audio, src.audio);
    }
    EXPECT_EQ(view_region_samples(scene, m.views, events, 1).size(), extra.size());
}
