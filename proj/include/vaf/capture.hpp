#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vaf/audio.hpp"
#include "vaf/camera.hpp"
#include "vaf/io.hpp"
#include "vaf/parallel.hpp"
#include "vaf/scene.hpp"
#include "vaf/segmentation.hpp"
#include "vaf/splat.hpp"

namespace vaf {

inline constexpr double kMarkerRadius = 2.0;
inline constexpr double kVisibilityDepthTolerance = 0.03;
inline constexpr double kMarkerMargin = 3.0;
inline constexpr int kMaxCameraAttempts = 32;
inline const std::array<double, 3> kMarkerColor{1.0, 0.0, 1.0};

// ---------------------------------------------------------------------------
// Marked / clean rendering

struct MarkedRender {
    Image marked;
    Image clean;
    Image depth; ///< depth of the clean render
    Vec2 projected = Vec2::Zero();
};

/// True when the first surface hit from the camera toward `point` lies within
/// 3% of the point's own distance.
inline bool point_visible(const Scene& scene, const Vec3& point, const Camera& cam) {
    const auto proj = cam.project(point);
    if (!proj || !cam.in_image(proj->x(), proj->y())) return false;
    const Vec3 origin = cam.center();
    const auto hit = raycast(scene, origin, point - origin);
    return hit && hit->first >= 1.0 - kVisibilityDepthTolerance;
}

/// Fraction of a pixel covered by a disk, by 8x8 supersampling.
inline double disk_coverage(int x, int y, double cx, double cy, double radius) {
    constexpr int kSub = 8;
    int inside = 0;
    for (int sy = 0; sy < kSub; ++sy)
        for (int sx = 0; sx < kSub; ++sx) {
            const double px = x - 0.5 + (sx + 0.5) / kSub;
            const double py = y - 0.5 + (sy + 0.5) / kSub;
            if ((px - cx) * (px - cx) + (py - cy) * (py - cy) <= radius * radius) ++inside;
        }
    return static_cast<double>(inside) / (kSub * kSub);
}

/// Composites an anti-aliased marker disk over a copy of `image`.
inline Image draw_marker(const Image& image, double u, double v, double radius = kMarkerRadius) {
    Image out = image;
    const int r = static_cast<int>(std::ceil(radius)) + 1;
    for (int y = static_cast<int>(std::floor(v)) - r; y <= static_cast<int>(std::ceil(v)) + r; ++y)
        for (int x = static_cast<int>(std::floor(u)) - r; x <= static_cast<int>(std::ceil(u)) + r; ++x) {
            if (!out.contains(x, y)) continue;
            const double c = disk_coverage(x, y, u, v, radius);
            if (c <= 0.0) continue;
            for (int ch = 0; ch < 3; ++ch)
                out.at(x, y, ch) = (1.0 - c) * out.at(x, y, ch) + c * kMarkerColor[static_cast<std::size_t>(ch)];
        }
    return out;
}

inline MarkedRender mark_and_render(const Scene& scene, const Vec3& point, const Camera& cam, int threads = 1) {
    if (!point_visible(scene, point, cam)) throw VisibilityError("impact point is occluded from or outside the camera");
    RenderOptions opts;
    opts.threads = threads;
    const RenderOutput r = rasterize(scene, cam, opts);
    const Vec3 proj = *cam.project(point);
    MarkedRender out;
    out.clean = r.rgb;
    out.depth = r.depth;
    out.projected = proj.head<2>();
    out.marked = draw_marker(r.rgb, proj.x(), proj.y());
    return out;
}

// ---------------------------------------------------------------------------
// Marker detection

inline bool is_marker_pixel(const Image& img, int x, int y) {
    return img.at(x, y, 0) > 0.8 && img.at(x, y, 2) > 0.8 && img.at(x, y, 1) < 0.3;
}

/// Subpixel centroid of the single magenta blob, weighted by min(R, B) - G.
inline Vec2 detect_marker(const Image& marked) {
    if (marked.channels != 3) throw ArgumentError("marker detection expects an RGB image");
    LabelMap blob(marked.width, marked.height, 1, -1);
    int blobs = 0;
    Vec2 centroid = Vec2::Zero();
    double total = 0.0;
    std::vector<std::pair<int, int>> stack;
    for (int y = 0; y < marked.height; ++y)
        for (int x = 0; x < marked.width; ++x) {
            if (blob.at(x, y) >= 0 || !is_marker_pixel(marked, x, y)) continue;
            const int id = blobs++;
            stack.assign(1, {x, y});
            blob.at(x, y) = id;
            while (!stack.empty()) {
                const auto [px, py] = stack.back();
                stack.pop_back();
                const double w = std::min(marked.at(px, py, 0), marked.at(px, py, 2)) - marked.at(px, py, 1);
                centroid += w * Vec2(px, py);
                total += w;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int nx = px + dx;
                        const int ny = py + dy;
                        if (blob.contains(nx, ny) && blob.at(nx, ny) < 0 && is_marker_pixel(marked, nx, ny)) {
                            blob.at(nx, ny) = id;
                            stack.emplace_back(nx, ny);
                        }
                    }
            }
        }
    if (blobs != 1) throw DetectionError(static_cast<std::size_t>(blobs));
    return centroid / total;
}

// ---------------------------------------------------------------------------
// Impact localization

/// Back-projects a detected pixel using depth from a marker-free render.
inline Vec3 localize_impact(const Vec2& pixel, const Camera& cam, const Image& clean_depth) {
    return backproject(pixel.x(), pixel.y(), clean_depth, cam);
}

inline Vec3 localize_impact(const Vec2& pixel, const Camera& cam, const Scene& scene, int threads = 1) {
    RenderOptions opts;
    opts.channels = channel::depth | channel::alpha;
    opts.threads = threads;
    return localize_impact(pixel, cam, rasterize(scene, cam, opts).depth);
}

// ---------------------------------------------------------------------------
// Impact recordings

inline constexpr int kPreRollSamples = kSampleRate / 10;

/// Simulated microphone take: 0.1 s of room noise, then the strike plus noise,
/// followed by spectral gating and standardization.
inline AudioClip record_impact(const MaterialModal& material, double strength, double noise_sigma, std::uint64_t seed) {
    const AudioClip strike = modal_synthesize(material, strength, derive_seed(seed, 1));
    Rng rng(derive_seed(seed, 2));
    AudioClip take;
    take.samples.assign(kPreRollSamples + strike.samples.size(), 0.0);
    for (std::size_t i = 0; i < strike.samples.size(); ++i) take.samples[kPreRollSamples + i] = strike.samples[i];
    for (double& s : take.samples) s += noise_sigma * rng.normal();
    return standardize(spectral_gate(take));
}

// ---------------------------------------------------------------------------
// Dataset

struct DatasetConfig {
    int view_count = 24;
    int event_count = 200;
    double view_distance = 4.0;
    double event_distance_min = 3.5;
    double event_distance_max = 4.5;
    double target_jitter = 0.25;
    double min_incidence = 0.2; ///< cosine between surface normal and view ray
    double strength_min = 0.5;
    double strength_max = 1.5;
    double noise_sigma = 0.01;
    double focal = 64.0;
    int image_size = 64;

    void validate() const {
        if (view_count < 8) throw ConfigError("dataset needs view_count >= 8");
        if (event_count < 10) throw ConfigError("dataset needs event_count >= 10");
        if (!(event_distance_min > 0.0 && event_distance_max >= event_distance_min))
            throw ConfigError("invalid event camera distance range");
        if (!(strength_min > 0.0 && strength_max <= 2.0 && strength_min <= strength_max))
            throw ConfigError("strike strength range must lie in (0, 2]");
        if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be >= 0");
        if (image_size < 8 || !(focal > 0.0)) throw ConfigError("invalid image geometry");
    }
};

inline nlohmann::json to_json(const DatasetConfig& c) {
    return {{"view_count", c.view_count},
            {"event_count", c.event_count},
            {"view_distance", c.view_distance},
            {"event_distance_min", c.event_distance_min},
            {"event_distance_max", c.event_distance_max},
            {"target_jitter", c.target_jitter},
            {"min_incidence", c.min_incidence},
            {"strength_min", c.strength_min},
            {"strength_max", c.strength_max},
            {"noise_sigma", c.noise_sigma},
            {"focal", c.focal},
            {"image_size", c.image_size}};
}

inline DatasetConfig dataset_config_from_json(const nlohmann::json& j) {
    DatasetConfig c;
    c.view_count = j.value("view_count", c.view_count);
    c.event_count = j.value("event_count", c.event_count);
    c.view_distance = j.value("view_distance", c.view_distance);
    c.event_distance_min = j.value("event_distance_min", c.event_distance_min);
    c.event_distance_max = j.value("event_distance_max", c.event_distance_max);
    c.target_jitter = j.value("target_jitter", c.target_jitter);
    c.min_incidence = j.value("min_incidence", c.min_incidence);
    c.strength_min = j.value("strength_min", c.strength_min);
    c.strength_max = j.value("strength_max", c.strength_max);
    c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
    c.focal = j.value("focal", c.focal);
    c.image_size = j.value("image_size", c.image_size);
    return c;
}

/// Per-component normalization bounds for the 12 modal parameters
/// (mode k: log frequency, log damping, amplitude).
struct ModalBounds {
    std::array<double, 3 * kModesPerMaterial> lo{};
    std::array<double, 3 * kModesPerMaterial> hi{};
};

inline ModalBounds modal_bounds(const std::map<int, MaterialModal>& materials, double padding = 0.1) {
    if (materials.empty()) throw ArgumentError("no materials to bound");
    ModalBounds b;
    b.lo.fill(std::numeric_limits<double>::infinity());
    b.hi.fill(-std::numeric_limits<double>::infinity());
    for (const auto& [id, m] : materials) {
        if (m.modes.size() != static_cast<std::size_t>(kModesPerMaterial))
            throw ArgumentError("material '" + m.name + "' does not have the expected mode count");
        for (int k = 0; k < kModesPerMaterial; ++k) {
            const Mode& mode = m.modes[static_cast<std::size_t>(k)];
            const std::array<double, 3> v{std::log(mode.frequency), std::log(std::max(mode.damping, 1e-3)), mode.amplitude};
            for (int c = 0; c < 3; ++c) {
                const auto i = static_cast<std::size_t>(3 * k + c);
                b.lo[i] = std::min(b.lo[i], v[static_cast<std::size_t>(c)]);
                b.hi[i] = std::max(b.hi[i], v[static_cast<std::size_t>(c)]);
            }
        }
    }
    for (std::size_t i = 0; i < b.lo.size(); ++i) {
        const double span = std::max(b.hi[i] - b.lo[i], 0.1);
        const double mid = 0.5 * (b.hi[i] + b.lo[i]);
        b.lo[i] = mid - 0.5 * span * (1.0 + 2.0 * padding);
        b.hi[i] = mid + 0.5 * span * (1.0 + 2.0 * padding);
    }
    return b;
}

inline nlohmann::json to_json(const ModalBounds& b) { return {{"lo", b.lo}, {"hi", b.hi}}; }

inline ModalBounds modal_bounds_from_json(const nlohmann::json& j) {
    ModalBounds b;
    b.lo = j.at("lo").get<decltype(b.lo)>();
    b.hi = j.at("hi").get<decltype(b.hi)>();
    return b;
}

struct ImpactEvent {
    int event_id = 0;
    Camera camera;
    Vec2 marker_pixel = Vec2::Zero();
    Vec2 projected_pixel = Vec2::Zero();
    Vec3 impact_point = Vec3::Zero();
    Vec3 true_point = Vec3::Zero();
    Vec3 normal = Vec3::UnitZ();
    Labels labels;
    double strength = 1.0;
    bool test = false;
    std::string audio_path;
    std::string clean_path;
    std::string marked_path;
    AudioClip audio;
    Image clean;
    Image marked;
};

struct DatasetStats {
    int requested = 0;
    int produced = 0;
    int skipped_occluded = 0;
    int skipped_detection = 0;
    int skipped_no_surface = 0;
};

struct DatasetManifest {
    DatasetConfig config;
    std::uint64_t seed = 0;
    std::string scene_path = "scene.json";
    std::vector<Camera> views;
    std::vector<std::string> view_paths;
    std::vector<ImpactEvent> events;
    DatasetStats stats;
    ModalBounds bounds;

    std::vector<const ImpactEvent*> split(bool test) const {
        std::vector<const ImpactEvent*> out;
        for (const auto& e : events)
            if (e.test == test) out.push_back(&e);
        return out;
    }
    std::vector<const ImpactEvent*> train() const { return split(false); }
    std::vector<const ImpactEvent*> test() const { return split(true); }
};

/// Cameras on a Fibonacci sphere around the origin, all looking at it.
inline std::vector<Camera> fibonacci_views(int n, double distance, double focal = 64.0, int size = 64) {
    std::vector<Camera> out;
    const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
    for (int i = 0; i < n; ++i) {
        const double z = 1.0 - (2.0 * i + 1.0) / n;
        const double r = std::sqrt(1.0 - z * z);
        const double phi = golden * i;
        const Vec3 eye = distance * Vec3(r * std::cos(phi), r * std::sin(phi), z);
        out.push_back(Camera::look_at(eye, Vec3::Zero(), Vec3::UnitZ(), focal, size));
    }
    return out;
}

/// Test/train assignment: events are ordered by (material, event id) and every
/// fifth one, starting with the third, goes to test.
inline void assign_split(std::vector<ImpactEvent>& events) {
    std::vector<std::size_t> order(events.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return std::pair(events[a].labels.material_id, events[a].event_id) <
               std::pair(events[b].labels.material_id, events[b].event_id);
    });
    for (std::size_t rank = 0; rank < order.size(); ++rank) events[order[rank]].test = rank % 5 == 2;
}

namespace detail {

enum class EventOutcome { ok, occluded, detection, no_surface };

inline std::string event_dir(int id) {
    std::ostringstream os;
    os << "events/" << std::setw(5) << std::setfill('0') << id;
    return os.str();
}

inline EventOutcome capture_event(const Scene& scene, const ImpactSample& impact, int id, const DatasetConfig& cfg,
                                  std::uint64_t seed, ImpactEvent& ev) {
    Rng rng(derive_seed(seed, 0xe7e47000ull + static_cast<std::uint64_t>(id)));
    std::optional<Camera> chosen;
    for (int attempt = 0; attempt < kMaxCameraAttempts && !chosen; ++attempt) {
        Vec3 dir(rng.normal(), rng.normal(), rng.normal());
        dir.normalize();
        const double dist = rng.uniform(cfg.event_distance_min, cfg.event_distance_max);
        const Vec3 target = impact.point + cfg.target_jitter * Vec3(rng.normal(), rng.normal(), rng.normal());
        const Vec3 eye = target + dist * dir;
        const Camera cam = Camera::look_at(eye, target, Vec3::UnitZ(), cfg.focal, cfg.image_size);
        const Vec3 view = (eye - impact.point).normalized();
        if (impact.normal.dot(view) < cfg.min_incidence) continue;
        const auto proj = cam.project(impact.point);
        if (!proj || !cam.in_image(proj->x(), proj->y(), kMarkerMargin)) continue;
        if (!point_visible(scene, impact.point, cam)) continue;
        const SegmentMask mask = oracle_masks(scene, cam);
        const int px = static_cast<int>(std::lround(proj->x()));
        const int py = static_cast<int>(std::lround(proj->y()));
        if (mask.level(Level::whole).at(px, py) != impact.labels.instance_id) continue;
        chosen = cam;
    }
    if (!chosen) return EventOutcome::occluded;

    const MarkedRender r = mark_and_render(scene, impact.point, *chosen);
    Vec2 pixel;
    try {
        pixel = detect_marker(r.marked);
    } catch (const DetectionError&) {
        return EventOutcome::detection;
    }
    Vec3 recovered;
    try {
        recovered = localize_impact(pixel, *chosen, r.depth);
    } catch (const NoSurfaceError&) {
        return EventOutcome::no_surface;
    }
    ev.event_id = id;
    ev.camera = *chosen;
    ev.marker_pixel = pixel;
    ev.projected_pixel = r.projected;
    ev.impact_point = recovered;
    ev.true_point = impact.point;
    ev.normal = impact.normal;
    ev.labels = impact.labels;
    ev.strength = rng.uniform(cfg.strength_min, cfg.strength_max);
    ev.audio = record_impact(scene.materials.at(impact.labels.material_id), ev.strength, cfg.noise_sigma,
                             derive_seed(seed, 0xa0d10000ull + static_cast<std::uint64_t>(id)));
    ev.clean = r.clean;
    ev.marked = r.marked;
    const std::string dir = event_dir(id);
    ev.audio_path = dir + "/audio.wav";
    ev.clean_path = dir + "/clean.png";
    ev.marked_path = dir + "/marked.png";
    return EventOutcome::ok;
}

} // namespace detail

/// Simulated capture session: training views plus paired (marked image, sound) events.
inline DatasetManifest build_dataset(const Scene& scene, const DatasetConfig& cfg, std::uint64_t seed, int threads = 1) {
    cfg.validate();
    DatasetManifest m;
    m.config = cfg;
    m.seed = seed;
    m.views = fibonacci_views(cfg.view_count, cfg.view_distance, cfg.focal, cfg.image_size);
    for (int v = 0; v < cfg.view_count; ++v) {
        std::ostringstream os;
        os << "views/view_" << std::setw(3) << std::setfill('0') << v << ".png";
        m.view_paths.push_back(os.str());
    }
    m.bounds = modal_bounds(scene.materials);

    const auto impacts = sample_impacts(scene, cfg.event_count, derive_seed(seed, 0x1a));
    std::vector<ImpactEvent> slots(impacts.size());
    std::vector<detail::EventOutcome> outcomes(impacts.size());
    parallel_for(impacts.size(), threads, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i)
            outcomes[i] = detail::capture_event(scene, impacts[i], static_cast<int>(i), cfg, seed, slots[i]);
    });
    m.stats.requested = cfg.event_count;
    for (std::size_t i = 0; i < impacts.size(); ++i) {
        switch (outcomes[i]) {
        case detail::EventOutcome::ok: m.events.push_back(std::move(slots[i])); break;
        case detail::EventOutcome::occluded: ++m.stats.skipped_occluded; break;
        case detail::EventOutcome::detection: ++m.stats.skipped_detection; break;
        case detail::EventOutcome::no_surface: ++m.stats.skipped_no_surface; break;
        }
    }
    m.stats.produced = static_cast<int>(m.events.size());
    assign_split(m.events);
    return m;
}

// ---------------------------------------------------------------------------
// Manifest serialization

inline nlohmann::json to_json(const ImpactEvent& e) {
    return {{"event_id", e.event_id},
            {"split", e.test ? "test" : "train"},
            {"camera", to_json(e.camera)},
            {"marker_pixel", {e.marker_pixel.x(), e.marker_pixel.y()}},
            {"projected_pixel", {e.projected_pixel.x(), e.projected_pixel.y()}},
            {"impact_point", to_json_array(e.impact_point)},
            {"true_point", to_json_array(e.true_point)},
            {"normal", to_json_array(e.normal)},
            {"labels", to_json(e.labels)},
            {"strength", e.strength},
            {"audio_path", e.audio_path},
            {"clean_path", e.clean_path},
            {"marked_path", e.marked_path}};
}

inline ImpactEvent event_from_json(const nlohmann::json& j) {
    ImpactEvent e;
    e.event_id = j.at("event_id").get<int>();
    e.test = j.at("split").get<std::string>() == "test";
    e.camera = camera_from_json(j.at("camera"));
    e.marker_pixel = Vec2(j.at("marker_pixel").at(0).get<double>(), j.at("marker_pixel").at(1).get<double>());
    e.projected_pixel = Vec2(j.at("projected_pixel").at(0).get<double>(), j.at("projected_pixel").at(1).get<double>());
    e.impact_point = vec3_from_json(j.at("impact_point"));
    e.true_point = vec3_from_json(j.at("true_point"));
    e.normal = vec3_from_json(j.at("normal"));
    e.labels = labels_from_json(j.at("labels"));
    e.strength = j.at("strength").get<double>();
    e.audio_path = j.at("audio_path").get<std::string>();
    e.clean_path = j.at("clean_path").get<std::string>();
    e.marked_path = j.at("marked_path").get<std::string>();
    if (!e.marker_pixel.allFinite() || !e.camera.in_image(e.marker_pixel.x(), e.marker_pixel.y()))
        throw ParseError("event " + std::to_string(e.event_id) + " has a marker pixel outside the image", 0);
    if (!e.impact_point.allFinite()) throw ParseError("event " + std::to_string(e.event_id) + " has a non-finite impact point", 0);
    return e;
}

inline nlohmann::json dataset_header(const DatasetManifest& m) {
    nlohmann::json views = nlohmann::json::array();
    for (std::size_t v = 0; v < m.views.size(); ++v) views.push_back({{"camera", to_json(m.views[v])}, {"image", m.view_paths[v]}});
    const auto train = m.train().size();
    const auto test = m.test().size();
    return {{"format", "vaf-dataset"},
            {"version", 1},
            {"frame", "world"},
            {"scene", m.scene_path},
            {"seed", m.seed},
            {"config", to_json(m.config)},
            {"views", views},
            {"events", "events.jsonl"},
            {"split", {{"train", train}, {"test", test}}},
            {"stats",
             {{"requested", m.stats.requested},
              {"produced", m.stats.produced},
              {"skipped_occluded", m.stats.skipped_occluded},
              {"skipped_detection", m.stats.skipped_detection},
              {"skipped_no_surface", m.stats.skipped_no_surface}}},
            {"modal_bounds", to_json(m.bounds)},
            {"audio", {{"sample_rate", kSampleRate}, {"encoding", "pcm16"}, {"samples", kClipSamples}}}};
}

/// Writes header, JSON-lines events, view PNGs, event PNGs and WAVs under `root`.
inline void write_dataset(const DatasetManifest& m, const Scene& scene, const std::filesystem::path& root) {
    std::filesystem::create_directories(root);
    for (std::size_t v = 0; v < m.views.size(); ++v) io::write_png(root / m.view_paths[v], rasterize(scene, m.views[v]).rgb);
    std::vector<nlohmann::json> lines;
    for (const auto& e : m.events) {
        io::write_wav(root / e.audio_path, e.audio);
        io::write_png(root / e.clean_path, e.clean);
        io::write_png(root / e.marked_path, e.marked);
        lines.push_back(to_json(e));
    }
    io::write_jsonl(root / "events.jsonl", lines);
    io::write_json(root / "dataset.json", dataset_header(m));
}

/// Reads a dataset written by write_dataset. Audio is re-standardized after
/// PCM16 decoding; images are not loaded (they are re-rendered on demand).
inline DatasetManifest read_dataset(const std::filesystem::path& root) {
    const nlohmann::json h = io::read_json(root / "dataset.json");
    if (h.value("format", "") != "vaf-dataset") throw ParseError("not a vaf dataset header", 0);
    DatasetManifest m;
    m.config = dataset_config_from_json(h.at("config"));
    m.seed = h.at("seed").get<std::uint64_t>();
    m.scene_path = h.at("scene").get<std::string>();
    for (const auto& v : h.at("views")) {
        m.views.push_back(camera_from_json(v.at("camera")));
        m.view_paths.push_back(v.at("image").get<std::string>());
    }
    const auto& s = h.at("stats");
    m.stats = {s.at("requested").get<int>(), s.at("produced").get<int>(), s.at("skipped_occluded").get<int>(),
               s.at("skipped_detection").get<int>(), s.at("skipped_no_surface").get<int>()};
    m.bounds = modal_bounds_from_json(h.at("modal_bounds"));
    for (const auto& line : io::read_jsonl(root / h.at("events").get<std::string>())) {
        ImpactEvent e = event_from_json(line);
        const auto path = root / e.audio_path;
        if (!std::filesystem::exists(path)) throw ParseError("missing audio file " + path.string(), 0);
        e.audio = renormalize(io::read_wav(path));
        e.audio.standardized = true;
        m.events.push_back(std::move(e));
    }
    return m;
}

} // namespace vaf
