#pragma once

#include <array>
#include <set>
#include <vector>

#include "vaf/splat.hpp"

namespace vaf {

/// Pixels whose accumulated alpha is below this count as background.
inline constexpr double kMaskAlphaThreshold = 0.95;

/// Per-pixel segment ids at the three levels, plus the material of each pixel.
struct SegmentMask {
    std::array<LabelMap, kLevelCount> ids;
    LabelMap material;

    int width() const { return material.width; }
    int height() const { return material.height; }
    const LabelMap& level(Level l) const { return ids[static_cast<std::size_t>(l)]; }

    /// Distinct non-null ids at a level, ascending.
    std::vector<int> segments(Level l) const {
        std::set<int> s;
        for (int v : level(l).data)
            if (v != kNullId) s.insert(v);
        return {s.begin(), s.end()};
    }

    std::vector<bool> region(Level l, int id) const {
        const auto& m = level(l);
        std::vector<bool> out(m.data.size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = m.data[i] == id;
        return out;
    }
};

/// Segmentation oracle: labels of the Gaussian with the largest compositing
/// weight at each pixel; background (alpha < 0.95) gets kNullId.
inline SegmentMask oracle_masks(const Scene& scene, const Camera& cam, int threads = 1) {
    RenderOptions opts;
    opts.channels = channel::alpha | channel::top_gaussian;
    opts.threads = threads;
    const RenderOutput r = rasterize(scene, cam, opts);
    SegmentMask mask;
    for (auto& m : mask.ids) m = LabelMap(cam.width, cam.height, 1, kNullId);
    mask.material = LabelMap(cam.width, cam.height, 1, kNullId);
    for (std::size_t p = 0; p < r.alpha.data.size(); ++p) {
        const int g = r.top_gaussian.data[p];
        if (g < 0 || r.alpha.data[p] < kMaskAlphaThreshold) continue;
        const Labels& l = scene.gaussians[static_cast<std::size_t>(g)].labels;
        for (int lv = 0; lv < kLevelCount; ++lv) mask.ids[static_cast<std::size_t>(lv)].data[p] = l.id(static_cast<Level>(lv));
        mask.material.data[p] = l.material_id;
    }
    return mask;
}

} // namespace vaf
