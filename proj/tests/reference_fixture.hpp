#pragma once

// Lazily built reference artifacts shared by the heavier tests in one binary.

#include "vaf/embed.hpp"
#include "vaf/field.hpp"

namespace vaf::testing {

struct Reference {
    Scene scene;
    DatasetManifest manifest;
    std::vector<ContrastiveSample> train;
    std::vector<ContrastiveSample> test;
    EncoderPair encoders;
};

inline const Reference& reference() {
    static const Reference r = [] {
        Reference out;
        out.scene = build_scene(SceneConfig{}, 0);
        out.manifest = build_dataset(out.scene, DatasetConfig{}, 0, 8);
        out.train = contrastive_samples(out.scene, out.manifest.train(), 8);
        out.test = contrastive_samples(out.scene, out.manifest.test(), 8);
        out.encoders = train_contrastive(encoder_training_samples(out.scene, out.manifest, 8), ContrastiveConfig{}, 0).first;
        return out;
    }();
    return r;
}

struct ReferenceField {
    TargetFeatureMaps targets;
    FeatureField field;
};

inline const ReferenceField& reference_field() {
    static const ReferenceField f = [] {
        const Reference& r = reference();
        ReferenceField out;
        out.targets = build_targets(r.scene, r.manifest.views, r.encoders.visual, 8);
        FieldConfig cfg;
        cfg.threads = 8;
        out.field = fit_features(r.scene, out.targets, cfg);
        return out;
    }();
    return f;
}

} // namespace vaf::testing
