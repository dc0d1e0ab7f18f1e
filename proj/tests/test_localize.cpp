#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "reference_fixture.hpp"
#include "vaf/localize.hpp"

using namespace vaf;
using vaf::testing::reference;
using vaf::testing::reference_field;

namespace {

// 4x4 blocks of 16 pixels; ids 0..3 by quadrant.
SegmentMask quadrant_masks(int size = 8) {
    SegmentMask m;
    for (auto& l : m.ids) l = LabelMap(size, size, 1, kNullId);
    m.material = LabelMap(size, size, 1, kNullId);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const int id = (y >= size / 2 ? 2 : 0) + (x >= size / 2 ? 1 : 0);
            for (auto& l : m.ids) l.at(x, y) = id;
            m.material.at(x, y) = id;
        }
    return m;
}

RelevanceMap constant_map(double v, int size = 8) {
    RelevanceMap r;
    r.scores = Image(size, size, 1, v);
    r.valid.assign(static_cast<std::size_t>(size * size), 1);
    return r;
}

double pearson(const RelevanceMap& a, const RelevanceMap& b) {
    std::vector<double> x, y;
    for (std::size_t p = 0; p < a.valid.size(); ++p)
        if (a.valid[p] && b.valid[p]) {
            x.push_back(a.scores.data[p]);
            y.push_back(b.scores.data[p]);
        }
    const Eigen::Map<const Eigen::VectorXd> ex(x.data(), static_cast<Eigen::Index>(x.size()));
    const Eigen::Map<const Eigen::VectorXd> ey(y.data(), static_cast<Eigen::Index>(y.size()));
    const Eigen::VectorXd cx = ex.array() - ex.mean();
    const Eigen::VectorXd cy = ey.array() - ey.mean();
    return cx.dot(cy) / (cx.norm() * cy.norm());
}

double rms_diff(const RelevanceMap& a, const RelevanceMap& b) {
    double s = 0.0;
    for (std::size_t p = 0; p < a.valid.size(); ++p) s += std::pow(a.scores.data[p] - b.scores.data[p], 2);
    return std::sqrt(s / static_cast<double>(a.valid.size()));
}

AudioClip strike(const MaterialModal& m, double strength, std::uint64_t seed) {
    return standardize(modal_synthesize(m, strength, seed));
}

const LocalizationReport& reference_report() {
    static const LocalizationReport r = evaluate_accuracy(reference_field().field, reference().scene, reference().manifest.test(),
                                                          reference().encoders.audio, Level::whole, 8);
    return r;
}

} // namespace

TEST(RankSegments, UniformRelevanceTiesInIdOrder) {
    const auto ranking = rank_segments(constant_map(0.25), quadrant_masks(), Level::whole);
    ASSERT_EQ(ranking.size(), 4u);
    for (int i = 0; i < 4; ++i) {
        EXPECT_EQ(ranking[static_cast<std::size_t>(i)].id, i);
        EXPECT_DOUBLE_EQ(ranking[static_cast<std::size_t>(i)].score, 0.25);
        EXPECT_EQ(ranking[static_cast<std::size_t>(i)].pixels, 16);
    }
}

TEST(RankSegments, IndicatorPutsSegmentFirst) {
    const SegmentMask masks = quadrant_masks();
    RelevanceMap rel = constant_map(0.0);
    for (std::size_t p = 0; p < rel.valid.size(); ++p)
        if (masks.level(Level::whole).data[p] == 2) rel.scores.data[p] = 1.0;
    const auto ranking = rank_segments(rel, masks, Level::whole);
    EXPECT_EQ(ranking.front().id, 2);
    EXPECT_DOUBLE_EQ(ranking.front().score, 1.0);
}

TEST(RankSegments, SmallSegmentsDroppedAndEmptyViewRejected) {
    const SegmentMask masks = quadrant_masks();
    RelevanceMap rel = constant_map(0.5);
    // Leave segment 1 with 7 valid pixels.
    int cleared = 0;
    for (std::size_t p = 0; p < rel.valid.size() && cleared < 9; ++p)
        if (masks.level(Level::whole).data[p] == 1) {
            rel.valid[p] = 0;
            ++cleared;
        }
    const auto ranking = rank_segments(rel, masks, Level::whole);
    ASSERT_EQ(ranking.size(), 3u);
    for (const auto& s : ranking) EXPECT_NE(s.id, 1);
    std::fill(rel.valid.begin(), rel.valid.end(), 0);
    EXPECT_THROW(rank_segments(rel, masks, Level::whole), EmptyViewError);
}

TEST(RankSegments, InvariantUnderIncreasingTransform) {
    const SegmentMask masks = quadrant_masks(16);
    Rng rng(3);
    RelevanceMap rel = constant_map(0.0, 16);
    for (double& v : rel.scores.data) v = rng.uniform(-1.0, 1.0);
    RelevanceMap shifted = rel;
    // Strictly increasing and affine, so segment means keep their order.
    for (double& v : shifted.scores.data) v = 3.0 * v - 0.2;
    const auto a = rank_segments(rel, masks, Level::whole);
    const auto b = rank_segments(shifted, masks, Level::whole);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].id, b[i].id);
}

TEST(Relevance, BoundedAndFinite) {
    const auto& r = reference();
    const ImpactEvent* e = r.manifest.test().front();
    const RelevanceMap rel = relevance_map(reference_field().field, r.scene, e->camera, e->audio, r.encoders.audio);
    int valid = 0;
    for (std::size_t p = 0; p < rel.valid.size(); ++p) {
        if (!rel.valid[p]) continue;
        ++valid;
        EXPECT_TRUE(std::isfinite(rel.scores.data[p]));
        EXPECT_LE(std::abs(rel.scores.data[p]), 1.0);
    }
    EXPECT_GT(valid, 0);
}

TEST(Relevance, EmptyViewIsRejected) {
    const auto& r = reference();
    const Camera away = Camera::look_at(Vec3(0, 0, 3), Vec3(0, 0, 8), Vec3::UnitY());
    EXPECT_THROW(relevance_map(reference_field().field, r.scene, away, r.manifest.events.front().audio, r.encoders.audio),
                 EmptyViewError);
}

TEST(Relevance, StruckMaterialOutscoresOtherMaterials) {
    const auto& r = reference();
    int comparisons = 0;
    for (const ImpactEvent* e : r.manifest.test()) {
        const RelevanceMap rel = relevance_map(reference_field().field, r.scene, e->camera, e->audio, r.encoders.audio);
        const SegmentMask masks = oracle_masks(r.scene, e->camera);
        std::map<int, std::pair<double, int>> by_material;
        for (std::size_t p = 0; p < rel.valid.size(); ++p)
            if (rel.valid[p] && masks.material.data[p] != kNullId) {
                auto& a = by_material[masks.material.data[p]];
                a.first += rel.scores.data[p];
                ++a.second;
            }
        const auto own = by_material.find(e->labels.material_id);
        ASSERT_NE(own, by_material.end());
        for (const auto& [mat, a] : by_material) {
            if (mat == e->labels.material_id) continue;
            EXPECT_GT(own->second.first / own->second.second, a.first / a.second) << "event " << e->event_id;
            ++comparisons;
        }
    }
    EXPECT_GT(comparisons, 0);
}

TEST(Relevance, PairedStrikesAgree) {
    const auto& r = reference();
    const ImpactEvent* e = r.manifest.test().front();
    const MaterialModal& m = r.scene.materials.at(e->labels.material_id);
    const RelevanceMap a = relevance_map(reference_field().field, r.scene, e->camera, strike(m, 1.0, 1), r.encoders.audio);
    const RelevanceMap b = relevance_map(reference_field().field, r.scene, e->camera, strike(m, 1.0, 2), r.encoders.audio);
    EXPECT_GE(pearson(a, b), 0.9);
}

TEST(Relevance, InvariantToStrikeAmplitude) {
    const auto& r = reference();
    const ImpactEvent* e = r.manifest.test().front();
    const MaterialModal& m = r.scene.materials.at(e->labels.material_id);
    const RelevanceMap a = relevance_map(reference_field().field, r.scene, e->camera, strike(m, 0.5, 4), r.encoders.audio);
    const RelevanceMap b = relevance_map(reference_field().field, r.scene, e->camera, strike(m, 1.0, 4), r.encoders.audio);
    EXPECT_LT(rms_diff(a, b), 1e-3);
}

TEST(Accuracy, ReferenceFixture) {
    const LocalizationReport& rep = reference_report();
    std::printf("acc1 %.3f acc3 %.3f chance %.3f over %zu\n", rep.accuracy(1), rep.accuracy(3), rep.chance(), rep.queries.size());
    EXPECT_GE(rep.accuracy(1), 0.70);
    EXPECT_GE(rep.accuracy(3), 0.90);
}

TEST(Accuracy, NondecreasingInK) {
    const LocalizationReport& rep = reference_report();
    for (int k = 1; k < 12; ++k) EXPECT_LE(rep.accuracy(k), rep.accuracy(k + 1));
}

TEST(Accuracy, RandomEncoderNearChance) {
    const auto& r = reference();
    const double acc = random_encoder_localization(reference_field().field, r.scene, r.manifest.test(), r.train, 20, 0,
                                                   Level::whole, 8);
    const double chance = reference_report().chance();
    const auto n = static_cast<int>(reference_report().queries.size());
    const auto [lo, hi] = wilson_interval(chance, n);
    std::printf("random acc1 %.3f chance %.3f CI [%.3f, %.3f]\n", acc, chance, lo, hi);
    EXPECT_GE(acc, lo);
    EXPECT_LE(acc, hi);
}

TEST(Accuracy, ThreadIndependent) {
    const auto& r = reference();
    const auto one = evaluate_accuracy(reference_field().field, r.scene, r.manifest.test(), r.encoders.audio, Level::whole, 1);
    EXPECT_EQ(to_json(one, "w").dump(), to_json(reference_report(), "w").dump());
}

TEST(Export, HeatmapAndReport) {
    RelevanceMap rel = constant_map(1.0);
    rel.scores.data[1] = -1.0;
    rel.valid[2] = 0;
    const auto path = std::filesystem::temp_directory_path() / "vaf_heatmap_test.png";
    write_heatmap(path, rel);
    const Image img = io::read_png(path);
    ASSERT_EQ(img.channels, 3);
    for (int c = 0; c < 3; ++c) {
        EXPECT_NEAR(img.data[static_cast<std::size_t>(c)], kHeatmapColormap[255][static_cast<std::size_t>(c)] / 255.0, 1e-12);
        EXPECT_NEAR(img.data[static_cast<std::size_t>(3 + c)], kHeatmapColormap[0][static_cast<std::size_t>(c)] / 255.0, 1e-12);
        EXPECT_EQ(img.data[static_cast<std::size_t>(6 + c)], 0.0);
    }
    std::filesystem::remove(path);
    const auto j = to_json(reference_report(), "w");
    EXPECT_EQ(j.at("level"), "w");
    EXPECT_EQ(j.at("queries").size(), reference_report().queries.size());
    EXPECT_GE(j.at("acc3").get<double>(), j.at("acc1").get<double>());
}

TEST(RankSegments, ReferenceRankingSurvivesNonlinearIncreasingTransform) {
    const auto& r = reference();
    for (const ImpactEvent* e : r.manifest.test()) {
        const RelevanceMap rel = relevance_map(reference_field().field, r.scene, e->camera, e->audio, r.encoders.audio);
        RelevanceMap warped = rel;
        for (double& v : warped.scores.data) v = std::exp(3.0 * v);
        const SegmentMask masks = oracle_masks(r.scene, e->camera);
        const auto a = rank_segments(rel, masks, Level::whole);
        const auto b = rank_segments(warped, masks, Level::whole);
        ASSERT_EQ(a.size(), b.size());
        for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].id, b[i].id) << "event " << e->event_id << " rank " << i;
    }
}

TEST(RankSegments, ReferenceTopThreeSurvivesNonlinearIncreasingTransform) {
    const auto& r = reference();
    for (const ImpactEvent* e : r.manifest.test()) {
        const RelevanceMap rel = relevance_map(reference_field().field, r.scene, e->camera, e->audio, r.encoders.audio);
        RelevanceMap warped = rel;
        for (double& v : warped.scores.data) v = std::exp(3.0 * v);
        const SegmentMask masks = oracle_masks(r.scene, e->camera);
        const auto a = rank_segments(rel, masks, Level::whole);
        const auto b = rank_segments(warped, masks, Level::whole);
        for (std::size_t i = 0; i < std::min<std::size_t>(3, a.size()); ++i) EXPECT_EQ(a[i].id, b[i].id);
    }
}
