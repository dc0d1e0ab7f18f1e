#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vaf/capture.hpp"
#include "vaf/embed.hpp"
#include "vaf/field.hpp"
#include "vaf/generate.hpp"
#include "vaf/io.hpp"
#include "vaf/localize.hpp"
#include "vaf/metrics.hpp"
#include "vaf/scene.hpp"

namespace vaf {

// ---------------------------------------------------------------------------
// Configuration

struct StageSeeds {
    std::uint64_t scene = 0;
    std::uint64_t dataset = 0;
    std::uint64_t embed = 0;
    std::uint64_t generate = 0;
    std::uint64_t evaluate = 0;
};

struct GenerationEvalConfig {
    std::string backend = "diffusion"; ///< backend whose clips are exported: diffusion | regression
    double guidance = kGuidanceScale;
    int sampling_steps = kDiffusionSteps;
    int exported_clips = 8;
};

struct LocalizationConfig {
    std::string level = "w";
    bool max_over_levels = false;
    int random_inits = 20;
    int heatmaps = 8;
};

struct PipelineConfig {
    std::string output = "runs/reference";
    int threads = 4;
    SceneConfig scene;
    DatasetConfig dataset;
    ContrastiveConfig embed;
    FieldConfig field;
    RegressorConfig regressor;
    DiffusionConfig diffusion;
    GenerationEvalConfig generation;
    LocalizationConfig localization;
    StageSeeds seeds;
};

namespace detail {

/// Reads keys from one JSON object and rejects any it did not consume.
class ObjectReader {
public:
    ObjectReader(const nlohmann::json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) throw ConfigError("config section '" + where_ + "' must be an object");
    }

    template <typename T>
    void read(const char* key, T& value) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            value = j_.at(key).get<T>();
        } catch (const nlohmann::json::exception&) {
            throw ConfigError("config key '" + where_ + "." + key + "' has the wrong type");
        }
    }

    const nlohmann::json* section(const char* key) {
        seen_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }

    void finish() const {
        for (const auto& [k, v] : j_.items())
            if (!seen_.contains(k)) throw ConfigError("unknown config key '" + (where_.empty() ? k : where_ + "." + k) + "'");
    }

private:
    const nlohmann::json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

} // namespace detail

inline nlohmann::json to_json(const PipelineConfig& c) {
    nlohmann::json objects = nlohmann::json::array();
    for (const auto& o : c.scene.objects)
        objects.push_back({{"kind", primitive_kind_name(o.kind)},
                           {"center", to_json_array(o.center)},
                           {"half_extents", to_json_array(o.half_extents)},
                           {"rotation", to_json_array(o.rotation)},
                           {"material_slot", o.material_slot}});
    return {
        {"output", c.output},
        {"threads", c.threads},
        {"scene",
         {{"object_count", c.scene.object_count},
          {"palette_size", c.scene.palette_size},
          {"gaussians_per_object", c.scene.gaussians_per_object},
          {"max_impacts", c.scene.max_impacts},
          {"layout_radius", c.scene.layout_radius},
          {"opacity", c.scene.opacity},
          {"objects", objects}}},
        {"dataset", to_json(c.dataset)},
        {"embed",
         {{"steps", c.embed.steps},
          {"batch_size", c.embed.batch_size},
          {"learning_rate", c.embed.learning_rate},
          {"initial_temperature", c.embed.initial_temperature},
          {"hidden", c.embed.hidden},
          {"input_noise", c.embed.input_noise},
          {"material_positives", c.embed.material_positives}}},
        {"field", {{"steps", c.field.steps}, {"learning_rate", c.field.learning_rate}}},
        {"regressor",
         {{"steps", c.regressor.steps},
          {"batch_size", c.regressor.batch_size},
          {"learning_rate", c.regressor.learning_rate},
          {"hidden", c.regressor.hidden}}},
        {"diffusion",
         {{"steps", c.diffusion.steps},
          {"batch_size", c.diffusion.batch_size},
          {"learning_rate", c.diffusion.learning_rate},
          {"condition_drop", c.diffusion.condition_drop},
          {"hidden", c.diffusion.hidden},
          {"timesteps", c.diffusion.timesteps},
          {"beta_1", c.diffusion.beta_1},
          {"beta_T", c.diffusion.beta_T}}},
        {"generation",
         {{"backend", c.generation.backend},
          {"guidance", c.generation.guidance},
          {"sampling_steps", c.generation.sampling_steps},
          {"exported_clips", c.generation.exported_clips}}},
        {"localization",
         {{"level", c.localization.level},
          {"max_over_levels", c.localization.max_over_levels},
          {"random_inits", c.localization.random_inits},
          {"heatmaps", c.localization.heatmaps}}},
        {"seeds",
         {{"scene", c.seeds.scene},
          {"dataset", c.seeds.dataset},
          {"embed", c.seeds.embed},
          {"generate", c.seeds.generate},
          {"evaluate", c.seeds.evaluate}}},
    };
}

inline void validate(const PipelineConfig& c) {
    if (c.threads < 1) throw ConfigError("threads must be >= 1");
    if (c.output.empty()) throw ConfigError("output must not be empty");
    c.scene.validate();
    c.dataset.validate();
    if (c.embed.steps < 1 || c.embed.batch_size < 2 || !(c.embed.learning_rate > 0.0) || c.embed.hidden < 1)
        throw ConfigError("invalid embed settings");
    if (!(c.embed.initial_temperature >= kMinTemperature && c.embed.initial_temperature <= kMaxTemperature))
        throw ConfigError("embed.initial_temperature outside [0.01, 1]");
    if (c.field.steps < 1 || !(c.field.learning_rate > 0.0)) throw ConfigError("invalid field settings");
    if (c.regressor.steps < 1 || c.regressor.batch_size < 1 || !(c.regressor.learning_rate > 0.0) || c.regressor.hidden < 1)
        throw ConfigError("invalid regressor settings");
    const auto& d = c.diffusion;
    if (d.steps < 1 || d.batch_size < 1 || !(d.learning_rate > 0.0) || d.hidden < 1 || d.timesteps < 1)
        throw ConfigError("invalid diffusion settings");
    if (!(d.condition_drop >= 0.0 && d.condition_drop <= 1.0)) throw ConfigError("diffusion.condition_drop outside [0, 1]");
    if (!(d.beta_1 > 0.0 && d.beta_T < 1.0 && d.beta_1 <= d.beta_T)) throw ConfigError("invalid diffusion beta schedule");
    if (c.generation.backend != "diffusion" && c.generation.backend != "regression")
        throw ConfigError("generation.backend must be 'diffusion' or 'regression'");
    if (c.generation.sampling_steps < 1 || c.generation.sampling_steps > d.timesteps)
        throw ConfigError("generation.sampling_steps must lie in [1, diffusion.timesteps]");
    if (c.generation.exported_clips < 0) throw ConfigError("generation.exported_clips must be >= 0");
    level_from_name(c.localization.level);
    if (c.localization.random_inits < 1 || c.localization.heatmaps < 0) throw ConfigError("invalid localization settings");
}

inline PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
    PipelineConfig c;
    detail::ObjectReader root(j, "");
    root.read("output", c.output);
    root.read("threads", c.threads);
    if (const auto* s = root.section("scene")) {
        detail::ObjectReader r(*s, "scene");
        r.read("object_count", c.scene.object_count);
        r.read("palette_size", c.scene.palette_size);
        r.read("gaussians_per_object", c.scene.gaussians_per_object);
        r.read("max_impacts", c.scene.max_impacts);
        r.read("layout_radius", c.scene.layout_radius);
        r.read("opacity", c.scene.opacity);
        if (const auto* objs = r.section("objects")) {
            if (!objs->is_array()) throw ConfigError("scene.objects must be an array");
            for (const auto& oj : *objs) {
                detail::ObjectReader o(oj, "scene.objects[]");
                ObjectSpec spec;
                std::string kind = primitive_kind_name(spec.kind);
                o.read("kind", kind);
                std::vector<double> center{0, 0, 0}, half{0.5, 0.5, 0.5}, rot{1, 0, 0, 0};
                o.read("center", center);
                o.read("half_extents", half);
                o.read("rotation", rot);
                o.read("material_slot", spec.material_slot);
                o.finish();
                if (center.size() != 3 || half.size() != 3 || rot.size() != 4) throw ConfigError("scene.objects[] vector has the wrong length");
                try {
                    spec.kind = primitive_kind_from_name(kind);
                } catch (const Error& e) {
                    throw ConfigError(e.what());
                }
                spec.center = Vec3(center[0], center[1], center[2]);
                spec.half_extents = Vec3(half[0], half[1], half[2]);
                spec.rotation = Quat(rot[0], rot[1], rot[2], rot[3]);
                c.scene.objects.push_back(spec);
            }
        }
        r.finish();
    }
    if (const auto* s = root.section("dataset")) {
        detail::ObjectReader r(*s, "dataset");
        auto& d = c.dataset;
        r.read("view_count", d.view_count);
        r.read("event_count", d.event_count);
        r.read("view_distance", d.view_distance);
        r.read("event_distance_min", d.event_distance_min);
        r.read("event_distance_max", d.event_distance_max);
        r.read("target_jitter", d.target_jitter);
        r.read("min_incidence", d.min_incidence);
        r.read("strength_min", d.strength_min);
        r.read("strength_max", d.strength_max);
        r.read("noise_sigma", d.noise_sigma);
        r.read("focal", d.focal);
        r.read("image_size", d.image_size);
        r.finish();
    }
    if (const auto* s = root.section("embed")) {
        detail::ObjectReader r(*s, "embed");
        r.read("steps", c.embed.steps);
        r.read("batch_size", c.embed.batch_size);
        r.read("learning_rate", c.embed.learning_rate);
        r.read("initial_temperature", c.embed.initial_temperature);
        r.read("hidden", c.embed.hidden);
        r.read("input_noise", c.embed.input_noise);
        r.read("material_positives", c.embed.material_positives);
        r.finish();
    }
    if (const auto* s = root.section("field")) {
        detail::ObjectReader r(*s, "field");
        r.read("steps", c.field.steps);
        r.read("learning_rate", c.field.learning_rate);
        r.finish();
    }
    if (const auto* s = root.section("regressor")) {
        detail::ObjectReader r(*s, "regressor");
        r.read("steps", c.regressor.steps);
        r.read("batch_size", c.regressor.batch_size);
        r.read("learning_rate", c.regressor.learning_rate);
        r.read("hidden", c.regressor.hidden);
        r.finish();
    }
    if (const auto* s = root.section("diffusion")) {
        detail::ObjectReader r(*s, "diffusion");
        r.read("steps", c.diffusion.steps);
        r.read("batch_size", c.diffusion.batch_size);
        r.read("learning_rate", c.diffusion.learning_rate);
        r.read("condition_drop", c.diffusion.condition_drop);
        r.read("hidden", c.diffusion.hidden);
        r.read("timesteps", c.diffusion.timesteps);
        r.read("beta_1", c.diffusion.beta_1);
        r.read("beta_T", c.diffusion.beta_T);
        r.finish();
    }
    if (const auto* s = root.section("generation")) {
        detail::ObjectReader r(*s, "generation");
        r.read("backend", c.generation.backend);
        r.read("guidance", c.generation.guidance);
        r.read("sampling_steps", c.generation.sampling_steps);
        r.read("exported_clips", c.generation.exported_clips);
        r.finish();
    }
    if (const auto* s = root.section("localization")) {
        detail::ObjectReader r(*s, "localization");
        r.read("level", c.localization.level);
        r.read("max_over_levels", c.localization.max_over_levels);
        r.read("random_inits", c.localization.random_inits);
        r.read("heatmaps", c.localization.heatmaps);
        r.finish();
    }
    if (const auto* s = root.section("seeds")) {
        detail::ObjectReader r(*s, "seeds");
        r.read("scene", c.seeds.scene);
        r.read("dataset", c.seeds.dataset);
        r.read("embed", c.seeds.embed);
        r.read("generate", c.seeds.generate);
        r.read("evaluate", c.seeds.evaluate);
        r.finish();
    }
    root.finish();
    validate(c);
    return c;
}

/// Applies "a.b.c=value" to a config document. The value is parsed as JSON
/// when possible, otherwise taken as a string. The key must already exist.
inline void apply_override(nlohmann::json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    nlohmann::json* node = &doc;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (!node->is_object() || !node->contains(part)) throw ConfigError("unknown config key '" + key + "'");
        node = &(*node)[part];
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    *node = value;
}

inline PipelineConfig load_config(const std::optional<std::filesystem::path>& path,
                                  const std::vector<std::string>& overrides = {}) {
    nlohmann::json doc = to_json(PipelineConfig{});
    if (path) {
        nlohmann::json file;
        try {
            file = io::read_json(*path);
        } catch (const Error& e) {
            throw ConfigError(std::string("cannot read config: ") + e.what());
        }
        // Validate the file on its own so unknown keys are reported against it.
        pipeline_config_from_json(file);
        doc.merge_patch(file);
    }
    for (const auto& o : overrides) apply_override(doc, o);
    return pipeline_config_from_json(doc);
}

// ---------------------------------------------------------------------------
// Stages

enum class Stage { scene, dataset, embed, field, gen_train, gen_eval, loc_eval, report };

inline const std::vector<Stage>& all_stages() {
    static const std::vector<Stage> s{Stage::scene,     Stage::dataset,  Stage::embed,    Stage::field,
                                      Stage::gen_train, Stage::gen_eval, Stage::loc_eval, Stage::report};
    return s;
}

inline std::string stage_name(Stage s) {
    switch (s) {
    case Stage::scene: return "scene";
    case Stage::dataset: return "dataset";
    case Stage::embed: return "embed";
    case Stage::field: return "field";
    case Stage::gen_train: return "gen-train";
    case Stage::gen_eval: return "gen-eval";
    case Stage::loc_eval: return "loc-eval";
    case Stage::report: return "report";
    }
    return "?";
}

inline Stage stage_from_name(const std::string& name) {
    for (Stage s : all_stages())
        if (stage_name(s) == name) return s;
    throw ConfigError("unknown stage '" + name + "'");
}

/// Direct upstream stages.
inline std::vector<Stage> stage_dependencies(Stage s) {
    switch (s) {
    case Stage::scene: return {};
    case Stage::dataset: return {Stage::scene};
    case Stage::embed: return {Stage::scene, Stage::dataset};
    case Stage::field: return {Stage::scene, Stage::dataset, Stage::embed};
    case Stage::gen_train: return {Stage::scene, Stage::dataset, Stage::embed, Stage::field};
    case Stage::gen_eval: return {Stage::scene, Stage::dataset, Stage::embed, Stage::field, Stage::gen_train};
    case Stage::loc_eval: return {Stage::scene, Stage::dataset, Stage::embed, Stage::field};
    case Stage::report: return {Stage::embed, Stage::field, Stage::gen_eval, Stage::loc_eval};
    }
    return {};
}

/// Upstream closure in pipeline order.
inline std::vector<Stage> stage_closure(Stage s) {
    std::set<Stage> seen;
    std::function<void(Stage)> visit = [&](Stage t) {
        for (Stage d : stage_dependencies(t))
            if (seen.insert(d).second) visit(d);
    };
    visit(s);
    std::vector<Stage> out;
    for (Stage t : all_stages())
        if (seen.contains(t)) out.push_back(t);
    return out;
}

/// The config slice a stage's outputs depend on.
inline nlohmann::json stage_inputs(Stage s, const PipelineConfig& c) {
    const nlohmann::json j = to_json(c);
    switch (s) {
    case Stage::scene: return {{"scene", j["scene"]}, {"seed", c.seeds.scene}};
    case Stage::dataset: return {{"dataset", j["dataset"]}, {"seed", c.seeds.dataset}};
    case Stage::embed: return {{"embed", j["embed"]}, {"seed", c.seeds.embed}};
    case Stage::field: return {{"field", j["field"]}};
    case Stage::gen_train: return {{"regressor", j["regressor"]}, {"diffusion", j["diffusion"]}, {"seed", c.seeds.generate}};
    case Stage::gen_eval: return {{"generation", j["generation"]}, {"seed", c.seeds.evaluate}};
    case Stage::loc_eval: return {{"localization", j["localization"]}, {"seed", c.seeds.evaluate}};
    case Stage::report: return nlohmann::json::object();
    }
    return {};
}

inline std::filesystem::path record_path(const std::filesystem::path& root, Stage s) {
    return root / "records" / (stage_name(s) + ".json");
}

inline std::filesystem::path stage_dir(const std::filesystem::path& root, Stage s) { return root / stage_name(s); }

/// Completion record: config hash, upstream record hashes, and the SHA-256 of
/// every file the stage wrote (paths relative to the output root).
struct StageRecord {
    std::string stage;
    std::string config_hash;
    std::map<std::string, std::string> upstream;
    std::map<std::string, std::string> outputs;
};

inline nlohmann::json to_json(const StageRecord& r) {
    return {{"stage", r.stage}, {"config_hash", r.config_hash}, {"upstream", r.upstream}, {"outputs", r.outputs}};
}

inline StageRecord stage_record_from_json(const nlohmann::json& j) {
    StageRecord r;
    r.stage = j.at("stage").get<std::string>();
    r.config_hash = j.at("config_hash").get<std::string>();
    r.upstream = j.at("upstream").get<std::map<std::string, std::string>>();
    r.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
    return r;
}

inline std::optional<StageRecord> read_record(const std::filesystem::path& root, Stage s) {
    const auto p = record_path(root, s);
    if (!std::filesystem::exists(p)) return std::nullopt;
    try {
        return stage_record_from_json(io::read_json(p));
    } catch (const nlohmann::json::exception&) {
        throw StalenessError(stage_name(s), "completion record is malformed");
    }
}

/// First output whose content no longer matches the record, if any.
inline std::optional<std::string> changed_output(const std::filesystem::path& root, const StageRecord& r) {
    for (const auto& [rel, hash] : r.outputs) {
        const auto p = root / rel;
        if (!std::filesystem::exists(p)) return rel + " is missing";
        if (io::sha256_file(p) != hash) return rel + " was modified";
    }
    return std::nullopt;
}

inline std::string record_hash(const std::filesystem::path& root, Stage s) {
    return io::sha256_file(record_path(root, s));
}

// ---------------------------------------------------------------------------
// Progress and logging

/// stderr log lines plus optional JSON-lines progress events.
class Progress {
public:
    explicit Progress(std::optional<std::filesystem::path> file = std::nullopt, bool quiet = false)
        : file_(std::move(file)), quiet_(quiet), start_(std::chrono::steady_clock::now()) {
        if (file_) {
            if (file_->has_parent_path()) std::filesystem::create_directories(file_->parent_path());
            std::ofstream(*file_, std::ios::trunc);
        }
    }

    void log(const std::string& msg) const {
        if (!quiet_) std::cerr << "[vaf] " << msg << "\n";
    }

    void event(const std::string& stage, const std::string& status, const nlohmann::json& extra = nlohmann::json::object()) {
        nlohmann::json j = {{"stage", stage}, {"status", status}, {"elapsed_s", elapsed()}};
        j.update(extra);
        log(stage + ": " + status + (extra.empty() ? "" : " " + extra.dump()));
        if (file_) std::ofstream(*file_, std::ios::app) << j.dump() << "\n";
    }

    double elapsed() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }

private:
    std::optional<std::filesystem::path> file_;
    bool quiet_;
    std::chrono::steady_clock::time_point start_;
};

// ---------------------------------------------------------------------------
// Artifact loading

inline Scene load_scene(const std::filesystem::path& root) { return scene_from_json(io::read_json(root / "scene" / "scene.json")); }

inline DatasetManifest load_dataset(const std::filesystem::path& root) { return read_dataset(root / "dataset"); }

inline EncoderPair load_encoders(const std::filesystem::path& root) {
    return encoders_from_checkpoint(nn::load_checkpoint(root / "embed" / "encoders.vafc"));
}

inline FeatureField load_field(const std::filesystem::path& root) { return read_field(root / "field"); }

struct GenerationModels {
    nn::DenseNet regressor;
    nn::DenseNet regressor_shuffled;
    DiffusionModel diffusion;
    DiffusionModel diffusion_shuffled;
    DiffusionModel diffusion_local;
};

inline GenerationModels load_generation_models(const std::filesystem::path& root) {
    const auto dir = root / "gen-train";
    GenerationModels g;
    g.regressor = nn::load_checkpoint(dir / "regressor.vafc").net("regressor");
    g.regressor_shuffled = nn::load_checkpoint(dir / "regressor_shuffled.vafc").net("regressor");
    g.diffusion = diffusion_from_checkpoint(nn::load_checkpoint(dir / "diffusion.vafc"));
    g.diffusion_shuffled = diffusion_from_checkpoint(nn::load_checkpoint(dir / "diffusion_shuffled.vafc"));
    g.diffusion_local = diffusion_from_checkpoint(nn::load_checkpoint(dir / "diffusion_local.vafc"));
    return g;
}

inline std::string condition_hash(const Eigen::VectorXd& c) {
    return io::sha256_hex(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(c.data()),
                                                        static_cast<std::size_t>(c.size()) * sizeof(double)));
}

inline std::string csv_series(const std::string& header, const std::vector<double>& v) {
    std::string s = header + "\n";
    char buf[64];
    for (std::size_t i = 0; i < v.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%zu,%.9g\n", i, v[i]);
        s += buf;
    }
    return s;
}

// ---------------------------------------------------------------------------
// Stage bodies. Each writes under its own directory and returns nothing; the
// runner hashes everything that ends up there.

namespace stages {

inline void scene(const PipelineConfig& c, const std::filesystem::path& root) {
    io::write_json(root / "scene" / "scene.json", to_json(build_scene(c.scene, c.seeds.scene)));
}

inline void dataset(const PipelineConfig& c, const std::filesystem::path& root) {
    const Scene s = load_scene(root);
    DatasetManifest m = build_dataset(s, c.dataset, c.seeds.dataset, c.threads);
    m.scene_path = "../scene/scene.json";
    write_dataset(m, s, root / "dataset");
}

inline void embed(const PipelineConfig& c, const std::filesystem::path& root) {
    const Scene s = load_scene(root);
    const DatasetManifest m = load_dataset(root);
    const auto samples = encoder_training_samples(s, m, c.threads);
    const auto [enc, log] = train_contrastive(samples, c.embed, c.seeds.embed);
    const auto dir = root / "embed";
    nn::save_checkpoint(dir / "encoders.vafc", to_checkpoint(enc));
    io::write_text(dir / "train_log.csv", log.csv());
    const auto train = contrastive_samples(s, m.train(), c.threads);
    const auto test = contrastive_samples(s, m.test(), c.threads);
    const RetrievalResult tr = retrieval_accuracy(enc, train);
    const RetrievalResult te = retrieval_accuracy(enc, test);
    const RetrievalResult rnd = random_encoder_retrieval(train, test, 20, c.seeds.embed, c.embed);
    const auto [lo, hi] = wilson_interval(te.chance, te.queries);
    io::write_json(dir / "retrieval.json",
                   {{"train_top1", tr.accuracy},
                    {"test_top1", te.accuracy},
                    {"chance", te.chance},
                    {"train_queries", tr.queries},
                    {"test_queries", te.queries},
                    {"random_encoder_top1", rnd.accuracy},
                    {"chance_ci", {lo, hi}},
                    {"final_loss", log.loss.back()},
                    {"temperature", enc.temperature()}});
}

inline void field(const PipelineConfig& c, const std::filesystem::path& root) {
    const Scene s = load_scene(root);
    const DatasetManifest m = load_dataset(root);
    const EncoderPair enc = load_encoders(root);
    const TargetFeatureMaps targets = build_targets(s, m.views, enc.visual, c.threads);
    FieldConfig fc = c.field;
    fc.threads = c.threads;
    const FeatureField f = fit_features(s, targets, fc);
    const auto dir = root / "field";
    write_field(f, dir);
    std::string csv = "step,s,p,w\n";
    char buf[96];
    for (std::size_t i = 0; i < f.loss_history[0].size(); ++i) {
        std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g\n", i, f.loss_history[0][i], f.loss_history[1][i], f.loss_history[2][i]);
        csv += buf;
    }
    io::write_text(dir / "loss.csv", csv);
}

inline void gen_train(const PipelineConfig& c, const std::filesystem::path& root) {
    const Scene s = load_scene(root);
    const DatasetManifest m = load_dataset(root);
    const EncoderPair enc = load_encoders(root);
    const FeatureField f = load_field(root);
    const GenerationData train = generation_data(s, f, m.train(), m.bounds, c.threads);
    const GenerationData shuffled = shuffle_conditions(train, c.seeds.generate);
    const GenerationData local = with_local_conditions(train, s, enc.visual, m.events, c.threads);
    const auto dir = root / "gen-train";

    // Independent single-threaded trainings; run side by side when allowed.
    const auto launch = c.threads > 1 ? std::launch::async : std::launch::deferred;
    auto d_real = std::async(launch, [&] { return train_diffusion(train, c.diffusion, c.seeds.generate); });
    auto d_shuf = std::async(launch, [&] { return train_diffusion(shuffled, c.diffusion, c.seeds.generate); });
    auto d_local = std::async(launch, [&] { return train_diffusion(local, c.diffusion, c.seeds.generate); });
    const auto [reg, reg_log] = train_regressor(train, c.regressor, c.seeds.generate);
    const auto reg_shuf = train_regressor(shuffled, c.regressor, c.seeds.generate).first;

    const auto save_reg = [&](const std::string& file, const nn::DenseNet& net) {
        nn::Checkpoint ck;
        ck.nets.emplace_back("regressor", net);
        ck.metadata = {{"kind", "vaf-regressor"}};
        nn::save_checkpoint(dir / file, ck);
    };
    save_reg("regressor.vafc", reg);
    save_reg("regressor_shuffled.vafc", reg_shuf);
    io::write_text(dir / "regressor_loss.csv", csv_series("step,loss", reg_log));
    const auto real = d_real.get();
    const auto shuf = d_shuf.get();
    const auto loc = d_local.get();
    nn::save_checkpoint(dir / "diffusion.vafc", to_checkpoint(real.first, c.diffusion));
    nn::save_checkpoint(dir / "diffusion_shuffled.vafc", to_checkpoint(shuf.first, c.diffusion));
    nn::save_checkpoint(dir / "diffusion_local.vafc", to_checkpoint(loc.first, c.diffusion));
    io::write_text(dir / "diffusion_loss.csv", csv_series("step,loss", real.second.loss));
    io::write_json(dir / "training.json",
                   {{"train_events", train.conditions.rows()},
                    {"skipped_events", train.skipped},
                    {"regressor_final_loss", reg_log.back()},
                    {"diffusion_final_loss", real.second.loss.back()},
                    {"condition_drop_rate",
                     static_cast<double>(std::count(real.second.dropped.begin(), real.second.dropped.end(), true)) /
                         static_cast<double>(real.second.dropped.size())}});
}

inline void gen_eval(const PipelineConfig& c, const std::filesystem::path& root) {
    const Scene s = load_scene(root);
    const DatasetManifest m = load_dataset(root);
    const EncoderPair enc = load_encoders(root);
    const FeatureField f = load_field(root);
    const GenerationModels g = load_generation_models(root);
    const GenerationData train = generation_data(s, f, m.train(), m.bounds, c.threads);
    const GenerationData test = generation_data(s, f, m.test(), m.bounds, c.threads);
    const GenerationData test_local = with_local_conditions(test, s, enc.visual, m.events, c.threads);
    const ReferenceAudio truth = reference_audio(enc.audio, recorded_clips(test, m.events));
    const auto seeds = query_seeds(static_cast<std::size_t>(test.conditions.rows()), c.seeds.evaluate);
    const auto dir = root / "gen-eval";

    const RegressionBackend regression(g.regressor);
    const DiffusionBackend diffusion(g.diffusion, c.generation.guidance, c.generation.sampling_steps);
    const DiffusionBackend shuffled(g.diffusion_shuffled, c.generation.guidance, c.generation.sampling_steps);
    const DiffusionBackend local(g.diffusion_local, c.generation.guidance, c.generation.sampling_steps);

    std::map<std::string, nn::Matrix> predictions;
    predictions["diffusion"] = predict_rows(diffusion, test.conditions, seeds, c.threads);
    predictions["regression"] = predict_rows(regression, test.conditions, seeds, c.threads);
    predictions["shuffled"] = predict_rows(shuffled, test.conditions, seeds, c.threads);
    predictions["local"] = predict_rows(local, test_local.conditions, seeds, c.threads);
    predictions["oracle"] = test.targets;

    std::vector<SystemMetrics> systems;
    std::map<std::string, std::vector<AudioClip>> clips;
    for (const std::string name : {"diffusion", "local", "shuffled", "regression", "oracle"}) {
        clips[name] = synthesize_rows(predictions[name], m.bounds, seeds, c.threads);
        systems.push_back(evaluate_clips(name, enc.audio, truth, clips[name]));
    }
    io::write_json(dir / "metrics.json", metrics_report(systems));

    // Regression audit on the oracle modal parameters.
    const auto mse = [](const nn::Matrix& p, const nn::Matrix& t) { return (p - t).squaredNorm() / static_cast<double>(p.size()); };
    std::vector<double> err;
    const nn::Matrix& reg = predictions["regression"];
    for (Eigen::Index i = 0; i < reg.rows(); ++i) {
        const double truth_f = denormalize_modal(test.targets.row(i).transpose(), m.bounds).modes[0].frequency;
        const double pred_f = denormalize_modal(reg.row(i).transpose(), m.bounds).modes[0].frequency;
        err.push_back(std::abs(pred_f - truth_f) / truth_f);
    }
    std::sort(err.begin(), err.end());
    const RegressionBackend reg_shuf(g.regressor_shuffled);
    io::write_json(dir / "regression.json",
                   {{"train_mse", mse(predict_rows(regression, train.conditions, seeds, 1), train.targets)},
                    {"test_mse", mse(reg, test.targets)},
                    {"shuffled_test_mse", mse(predict_rows(reg_shuf, test.conditions, seeds, 1), test.targets)},
                    {"f1_median_relative_error", err.empty() ? 0.0 : err[err.size() / 2]},
                    {"test_events", test.conditions.rows()},
                    {"skipped_events", test.skipped}});

    // Exported clips and their query records.
    std::vector<nlohmann::json> records;
    const auto& exported = clips[c.generation.backend];
    for (std::size_t i = 0; i < exported.size() && static_cast<int>(i) < c.generation.exported_clips; ++i) {
        const ImpactEvent& e = event_by_id(m.events, test.event_ids[i]);
        const std::string rel = "clips/event_" + std::to_string(e.event_id) + ".wav";
        io::write_wav(dir / rel, exported[i]);
        records.push_back({{"event_id", e.event_id},
                           {"pixel", {e.marker_pixel.x(), e.marker_pixel.y()}},
                           {"condition_hash", condition_hash(test.conditions.row(static_cast<Eigen::Index>(i)).transpose())},
                           {"backend", c.generation.backend},
                           {"seed", seeds[i]},
                           {"output", rel}});
    }
    io::write_jsonl(dir / "queries.jsonl", records);
}

inline void loc_eval(const PipelineConfig& c, const std::filesystem::path& root) {
    const Scene s = load_scene(root);
    const DatasetManifest m = load_dataset(root);
    const EncoderPair enc = load_encoders(root);
    const FeatureField f = load_field(root);
    const Level level = level_from_name(c.localization.level);
    const auto test = m.test();
    const LocalizationReport rep = evaluate_accuracy(f, s, test, enc.audio, level, c.threads, c.localization.max_over_levels);
    const auto train = contrastive_samples(s, m.train(), c.threads);
    const double random = random_encoder_localization(f, s, test, train, c.localization.random_inits, c.seeds.evaluate, level, c.threads);
    const auto [lo, hi] = wilson_interval(rep.chance(), static_cast<int>(rep.queries.size()));
    nlohmann::json j = to_json(rep, c.localization.level);
    j["max_over_levels"] = c.localization.max_over_levels;
    j["random_encoder_acc1"] = random;
    j["chance_ci"] = {lo, hi};
    const auto dir = root / "loc-eval";
    io::write_json(dir / "accuracy.json", j);
    for (std::size_t i = 0; i < test.size() && static_cast<int>(i) < c.localization.heatmaps; ++i) {
        const ImpactEvent& e = *test[i];
        const RelevanceMap rel = relevance_map(f, s, e.camera, e.audio, enc.audio,
                                               c.localization.max_over_levels ? std::nullopt : std::optional<Level>(level));
        write_heatmap(dir / "heatmaps" / ("event_" + std::to_string(e.event_id) + ".png"), rel);
    }
}

inline void report(const PipelineConfig&, const std::filesystem::path& root) {
    const nlohmann::json retrieval = io::read_json(root / "embed" / "retrieval.json");
    const nlohmann::json metrics = io::read_json(root / "gen-eval" / "metrics.json");
    const nlohmann::json regression = io::read_json(root / "gen-eval" / "regression.json");
    nlohmann::json loc = io::read_json(root / "loc-eval" / "accuracy.json");
    loc.erase("queries");
    const nlohmann::json field = io::read_json(root / "field" / "field.json");
    io::write_json(root / "report" / "report.json",
                   {{"retrieval", retrieval},
                    {"field", field},
                    {"generation", metrics},
                    {"regression", regression},
                    {"localization", loc}});
}

} // namespace stages

// ---------------------------------------------------------------------------
// Runner

enum class StageOutcome { computed, skipped };

class Pipeline {
public:
    Pipeline(PipelineConfig config, Progress progress = Progress{})
        : config_(std::move(config)), progress_(std::move(progress)) {
        validate(config_);
    }

    const PipelineConfig& config() const { return config_; }
    std::filesystem::path root() const { return config_.output; }
    Progress& progress() { return progress_; }

    /// Runs one stage after checking its upstream records. Re-running with
    /// unchanged inputs and intact outputs is a no-op.
    StageOutcome run(Stage s) {
        const auto r = root();
        StageRecord rec;
        rec.stage = stage_name(s);
        rec.config_hash = io::sha256_hex(stage_inputs(s, config_).dump());
        for (Stage d : stage_closure(s)) {
            const auto up = read_record(r, d);
            if (!up) throw DependencyError(stage_name(d));
            if (up->config_hash != io::sha256_hex(stage_inputs(d, config_).dump()))
                throw StalenessError(stage_name(d), "its configuration changed; re-run it");
            if (const auto changed = changed_output(r, *up)) throw StalenessError(stage_name(d), *changed);
            for (const auto& [name, hash] : up->upstream)
                if (hash != record_hash(r, stage_from_name(name)))
                    throw StalenessError(stage_name(d), "upstream stage '" + name + "' was re-run after it");
        }
        for (Stage d : stage_dependencies(s)) rec.upstream[stage_name(d)] = record_hash(r, d);

        if (const auto old = read_record(r, s)) {
            if (old->config_hash == rec.config_hash && old->upstream == rec.upstream && !changed_output(r, *old)) {
                progress_.event(rec.stage, "skipped");
                return StageOutcome::skipped;
            }
        }
        progress_.event(rec.stage, "started");
        const auto t0 = std::chrono::steady_clock::now();
        const auto dir = stage_dir(r, s);
        std::filesystem::remove(record_path(r, s));
        std::filesystem::remove_all(dir);
        std::filesystem::create_directories(dir);
        body(s)(config_, r);
        for (const auto& entry : std::filesystem::recursive_directory_iterator(dir))
            if (entry.is_regular_file())
                rec.outputs[std::filesystem::relative(entry.path(), r).generic_string()] = io::sha256_file(entry.path());
        io::write_json(record_path(r, s), to_json(rec));
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        last_seconds_[s] = seconds;
        progress_.event(rec.stage, "done", {{"seconds", seconds}, {"outputs", rec.outputs.size()}});
        return StageOutcome::computed;
    }

    /// Every stage in order.
    std::vector<StageOutcome> run_all() {
        std::vector<StageOutcome> out;
        for (Stage s : all_stages()) out.push_back(run(s));
        return out;
    }

    /// Wall time of the most recent computation of `s` in this process.
    std::optional<double> seconds(Stage s) const {
        const auto it = last_seconds_.find(s);
        return it == last_seconds_.end() ? std::nullopt : std::optional<double>(it->second);
    }

private:
    static std::function<void(const PipelineConfig&, const std::filesystem::path&)> body(Stage s) {
        switch (s) {
        case Stage::scene: return stages::scene;
        case Stage::dataset: return stages::dataset;
        case Stage::embed: return stages::embed;
        case Stage::field: return stages::field;
        case Stage::gen_train: return stages::gen_train;
        case Stage::gen_eval: return stages::gen_eval;
        case Stage::loc_eval: return stages::loc_eval;
        case Stage::report: return stages::report;
        }
        throw ArgumentError("unknown stage");
    }

    PipelineConfig config_;
    Progress progress_;
    std::map<Stage, double> last_seconds_;
};

/// Files under the output root not listed in any completion record.
inline std::vector<std::string> orphan_outputs(const std::filesystem::path& root) {
    std::set<std::string> known;
    for (Stage s : all_stages())
        if (const auto r = read_record(root, s)) {
            known.insert(std::filesystem::relative(record_path(root, s), root).generic_string());
            for (const auto& [rel, h] : r->outputs) known.insert(rel);
        }
    std::vector<std::string> out;
    if (!std::filesystem::exists(root)) return out;
    for (const auto& e : std::filesystem::recursive_directory_iterator(root)) {
        if (!e.is_regular_file()) continue;
        const auto rel = std::filesystem::relative(e.path(), root).generic_string();
        if (!known.contains(rel)) out.push_back(rel);
    }
    std::sort(out.begin(), out.end());
    return out;
}

/// CLI exit code for an exception escaping a stage.
inline int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e)) return 2;
    if (dynamic_cast<const DependencyError*>(&e) || dynamic_cast<const StalenessError*>(&e)) return 3;
    if (dynamic_cast<const NumericError*>(&e)) return 4;
    return 1;
}

} // namespace vaf
