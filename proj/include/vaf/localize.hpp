#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "vaf/colormap.hpp"
#include "vaf/embed.hpp"
#include "vaf/field.hpp"
#include "vaf/io.hpp"
#include "vaf/segmentation.hpp"

namespace vaf {

inline constexpr int kMinSegmentPixels = 8;

/// Per-pixel cosine between the rendered feature and the audio embedding.
struct RelevanceMap {
    Image scores;                ///< W x H, 0 where invalid
    std::vector<std::uint8_t> valid; ///< alpha > kQueryAlphaFloor and nonzero feature
};

/// Scores a rendered field against an audio embedding. `level` = nullopt takes
/// the max over the three levels.
inline RelevanceMap relevance_from_render(const RenderOutput& r, const Embedding& audio,
                                          std::optional<Level> level = Level::whole) {
    const int w = r.alpha.width;
    const int h = r.alpha.height;
    RelevanceMap m;
    m.scores = Image(w, h, 1);
    m.valid.assign(r.alpha.pixel_count(), 0);
    std::vector<int> levels;
    if (level)
        levels.push_back(static_cast<int>(*level));
    else
        levels = {0, 1, 2};
    bool any = false;
    for (std::size_t p = 0; p < m.valid.size(); ++p) {
        if (!(r.alpha.data[p] > kQueryAlphaFloor)) continue;
        double best = -2.0;
        for (int l : levels) {
            const Image& f = r.features[static_cast<std::size_t>(l)];
            const Eigen::Map<const Eigen::VectorXd> v(f.data.data() + p * kFeatureDim, kFeatureDim);
            const double n = v.norm();
            if (!(n > 1e-12)) continue;
            best = std::max(best, std::clamp(v.dot(audio) / n, -1.0, 1.0));
        }
        if (best < -1.5) continue;
        m.scores.data[p] = best;
        m.valid[p] = 1;
        any = true;
    }
    if (!any) throw EmptyViewError("no valid pixels in view");
    return m;
}

inline RelevanceMap relevance_map(const FeatureField& field, const Scene& scene, const Camera& cam,
                                  const AudioClip& clip, const Encoder& audio, std::optional<Level> level = Level::whole,
                                  int threads = 1) {
    return relevance_from_render(render_field(field, scene, cam, threads), encode_audio(audio, clip), level);
}

struct SegmentScore {
    int id = kNullId;
    double score = 0.0;
    int pixels = 0;
};

/// Mean relevance over each segment's valid pixels, descending, ties by id.
/// Segments with fewer than kMinSegmentPixels valid pixels are dropped.
inline std::vector<SegmentScore> rank_segments(const RelevanceMap& rel, const SegmentMask& masks, Level level) {
    const LabelMap& ids = masks.level(level);
    if (ids.pixel_count() != rel.valid.size()) throw ArgumentError("masks do not match the relevance map");
    std::map<int, std::pair<double, int>> acc;
    for (std::size_t p = 0; p < rel.valid.size(); ++p) {
        if (!rel.valid[p] || ids.data[p] == kNullId) continue;
        auto& a = acc[ids.data[p]];
        a.first += rel.scores.data[p];
        ++a.second;
    }
    std::vector<SegmentScore> out;
    for (const auto& [id, a] : acc)
        if (a.second >= kMinSegmentPixels) out.push_back({id, a.first / a.second, a.second});
    if (out.empty()) throw EmptyViewError("no segment has enough valid pixels");
    std::stable_sort(out.begin(), out.end(), [](const SegmentScore& a, const SegmentScore& b) {
        return a.score > b.score || (a.score == b.score && a.id < b.id);
    });
    return out;
}

/// (material, instance) of a segment by majority over its pixels.
inline std::pair<int, int> segment_identity(const SegmentMask& masks, Level level, int id) {
    std::map<std::pair<int, int>, int> votes;
    const LabelMap& ids = masks.level(level);
    const LabelMap& inst = masks.level(Level::whole);
    for (std::size_t p = 0; p < ids.data.size(); ++p)
        if (ids.data[p] == id) ++votes[{masks.material.data[p], inst.data[p]}];
    if (votes.empty()) throw ArgumentError("segment " + std::to_string(id) + " is not in the mask");
    return std::max_element(votes.begin(), votes.end(), [](const auto& a, const auto& b) { return a.second < b.second; })->first;
}

struct LocalizationQuery {
    int event_id = 0;
    int material_id = kNullId;
    int instance_id = kNullId;
    int segments = 0;
    int rank = -1; ///< 0-based rank of the first correct segment, -1 if none
    std::vector<SegmentScore> ranking;
};

struct LocalizationReport {
    std::vector<LocalizationQuery> queries;

    double accuracy(int k) const {
        if (queries.empty()) return 0.0;
        const auto hits = std::count_if(queries.begin(), queries.end(), [k](const auto& q) { return q.rank >= 0 && q.rank < k; });
        return static_cast<double>(hits) / static_cast<double>(queries.size());
    }
    /// Expected Acc(1) of a uniformly random pick among each query's segments.
    double chance() const {
        double c = 0.0;
        for (const auto& q : queries) c += q.segments > 0 ? 1.0 / q.segments : 0.0;
        return queries.empty() ? 0.0 : c / static_cast<double>(queries.size());
    }
};

/// Scores one event: a segment is correct when its material and instance both
/// match the struck object's.
inline LocalizationQuery localize_event(const FeatureField& field, const Scene& scene, const ImpactEvent& e,
                                        const Encoder& audio, Level level = Level::whole, bool max_over_levels = false) {
    const RelevanceMap rel = relevance_map(field, scene, e.camera, e.audio, audio,
                                           max_over_levels ? std::nullopt : std::optional<Level>(level));
    const SegmentMask masks = oracle_masks(scene, e.camera);
    LocalizationQuery q;
    q.event_id = e.event_id;
    q.material_id = e.labels.material_id;
    q.instance_id = e.labels.instance_id;
    q.ranking = rank_segments(rel, masks, level);
    q.segments = static_cast<int>(q.ranking.size());
    for (std::size_t i = 0; i < q.ranking.size(); ++i) {
        const auto [mat, inst] = segment_identity(masks, level, q.ranking[i].id);
        if (mat == q.material_id && inst == q.instance_id) {
            q.rank = static_cast<int>(i);
            break;
        }
    }
    return q;
}

inline LocalizationReport evaluate_accuracy(const FeatureField& field, const Scene& scene,
                                            const std::vector<const ImpactEvent*>& events, const Encoder& audio,
                                            Level level = Level::whole, int threads = 1, bool max_over_levels = false) {
    LocalizationReport r;
    r.queries.resize(events.size());
    parallel_for(events.size(), threads, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i)
            r.queries[i] = localize_event(field, scene, *events[i], audio, level, max_over_levels);
    });
    return r;
}

/// Acc(1) with untrained audio encoders (standardization fitted on `fit`),
/// averaged over `inits` seeds.
inline double random_encoder_localization(const FeatureField& field, const Scene& scene,
                                          const std::vector<const ImpactEvent*>& events,
                                          const std::vector<ContrastiveSample>& fit, int inits, std::uint64_t seed,
                                          Level level = Level::whole, int threads = 1) {
    double acc = 0.0;
    for (int i = 0; i < inits; ++i) {
        const EncoderPair enc = initial_encoders(fit, ContrastiveConfig{}, derive_seed(seed, 0x10c0000ull + static_cast<std::uint64_t>(i)));
        acc += evaluate_accuracy(field, scene, events, enc.audio, level, threads).accuracy(1) / inits;
    }
    return acc;
}

inline nlohmann::json to_json(const LocalizationReport& r, const std::string& level) {
    nlohmann::json q = nlohmann::json::array();
    for (const auto& e : r.queries) {
        nlohmann::json top = nlohmann::json::array();
        for (std::size_t i = 0; i < std::min<std::size_t>(3, e.ranking.size()); ++i)
            top.push_back({{"segment", e.ranking[i].id}, {"score", e.ranking[i].score}});
        q.push_back({{"event_id", e.event_id},
                     {"material_id", e.material_id},
                     {"instance_id", e.instance_id},
                     {"segments", e.segments},
                     {"rank", e.rank},
                     {"top", top}});
    }
    return {{"level", level},
            {"acc1", r.accuracy(1)},
            {"acc3", r.accuracy(3)},
            {"chance", r.chance()},
            {"count", r.queries.size()},
            {"queries", q}};
}

/// Maps scores in [-1, 1] through kHeatmapColormap; invalid pixels are black.
inline Image heatmap_image(const RelevanceMap& rel) {
    Image img(rel.scores.width, rel.scores.height, 3);
    for (std::size_t p = 0; p < rel.valid.size(); ++p) {
        if (!rel.valid[p]) continue;
        const double t = std::clamp(0.5 * (rel.scores.data[p] + 1.0), 0.0, 1.0);
        const auto& c = kHeatmapColormap[static_cast<std::size_t>(std::lround(t * 255.0))];
        for (int k = 0; k < 3; ++k) img.data[p * 3 + static_cast<std::size_t>(k)] = c[static_cast<std::size_t>(k)] / 255.0;
    }
    return img;
}

inline void write_heatmap(const std::filesystem::path& path, const RelevanceMap& rel) { io::write_png(path, heatmap_image(rel)); }

} // namespace vaf
