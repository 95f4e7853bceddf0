#pragma once

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "cws/augment.hpp"
#include "cws/imageio.hpp"
#include "cws/rng.hpp"

namespace cws {

struct ManifestEntry {
    std::string image;
    std::string mask;  // empty = null (unlabelled)
    std::string split;
    std::string source;
};

struct DatasetManifest {
    std::filesystem::path base_dir;
    std::vector<ManifestEntry> entries;

    std::map<std::string, int> split_counts() const {
        std::map<std::string, int> c;
        for (const auto& e : entries) ++c[e.split];
        return c;
    }
    std::filesystem::path resolve(const std::string& rel) const { return base_dir / rel; }
};

inline const std::vector<std::string>& valid_splits() {
    static const std::vector<std::string> v{"train", "val", "testA", "testB"};
    return v;
}

inline void validate_manifest(const DatasetManifest& m) {
    if (m.entries.empty()) throw std::runtime_error("manifest: empty entry list");
    for (size_t i = 0; i < m.entries.size(); ++i) {
        const auto& e = m.entries[i];
        std::string where = "manifest entry " + std::to_string(i) + " (" + e.image + ")";
        if (std::find(valid_splits().begin(), valid_splits().end(), e.split) == valid_splits().end())
            throw std::runtime_error(where + ": unknown split '" + e.split + "'");
        if (e.split == "testB" && !e.mask.empty())
            throw std::runtime_error(where + ": testB entries must have null masks");
        if (e.split != "testB" && e.mask.empty())
            throw std::runtime_error(where + ": split '" + e.split + "' requires a mask");
        if (!std::filesystem::exists(m.resolve(e.image)))
            throw std::runtime_error(where + ": image path does not resolve");
        if (!e.mask.empty() && !std::filesystem::exists(m.resolve(e.mask)))
            throw std::runtime_error(where + ": mask path does not resolve");
    }
}

inline DatasetManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open manifest: " + path);
    nlohmann::json j;
    in >> j;
    DatasetManifest m;
    m.base_dir = std::filesystem::absolute(path).parent_path();
    for (const auto& je : j.at("entries")) {
        ManifestEntry e;
        e.image = je.at("image").get<std::string>();
        e.mask = je.at("mask").is_null() ? "" : je.at("mask").get<std::string>();
        e.split = je.at("split").get<std::string>();
        e.source = je.value("source", "unknown");
        m.entries.push_back(std::move(e));
    }
    validate_manifest(m);
    return m;
}

inline void save_manifest(const DatasetManifest& m, const std::string& path) {
    nlohmann::json j;
    j["entries"] = nlohmann::json::array();
    for (const auto& e : m.entries) {
        nlohmann::json je;
        je["image"] = e.image;
        if (e.mask.empty()) je["mask"] = nullptr;
        else je["mask"] = e.mask;
        je["split"] = e.split;
        je["source"] = e.source;
        j["entries"].push_back(je);
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write manifest: " + path);
    out << j.dump(2) << '\n';
}

struct SynthConfig {
    int n = 10;
    int size = 64;
    uint64_t seed = 7;
    double empty_frac = 0.0;       // fraction of samples with all-black masks
    double blob_min_frac = 0.02;   // positive-area bounds for nonempty masks
    double blob_max_frac = 0.30;
    std::string split = "train";
    std::string source = "synthetic";
};

namespace detail {

// low-frequency cosine field in [0,1]
struct NoiseField {
    double a[3], fy[3], fx[3], ph[3];
    explicit NoiseField(std::mt19937_64& rng) {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (int i = 0; i < 3; ++i) {
            a[i] = 0.3 + 0.7 * u(rng);
            fy[i] = (1.0 + 3.0 * u(rng)) * 2.0 * M_PI;
            fx[i] = (1.0 + 3.0 * u(rng)) * 2.0 * M_PI;
            ph[i] = u(rng) * 2.0 * M_PI;
        }
    }
    double operator()(double y, double x) const {
        double v = 0, norm = 0;
        for (int i = 0; i < 3; ++i) {
            v += a[i] * std::cos(fy[i] * y + fx[i] * x + ph[i]);
            norm += a[i];
        }
        return 0.5 + 0.5 * v / norm;
    }
};

struct Ellipse {
    double cy, cx, ay, ax, rot;
    bool contains(double y, double x) const {
        double dy = y - cy, dx = x - cx;
        double ry = std::cos(rot) * dy - std::sin(rot) * dx;
        double rx = std::sin(rot) * dy + std::cos(rot) * dx;
        return (ry * ry) / (ay * ay) + (rx * rx) / (ax * ax) <= 1.0;
    }
};

}  // namespace detail

// Textured background with 0-2 elliptical wound-like blobs and exact masks.
// Deterministic per seed; a configurable fraction of samples get empty masks.
inline DatasetManifest synth_dataset(const SynthConfig& cfg, const std::string& out_dir) {
    if (cfg.n < 1) throw std::invalid_argument("synth_dataset: n must be >= 1");
    namespace fs = std::filesystem;
    fs::path root(out_dir);
    std::error_code ec;
    fs::create_directories(root / "images", ec);
    fs::create_directories(root / "masks", ec);
    if (!fs::exists(root / "images") || !fs::exists(root / "masks"))
        throw std::runtime_error("synth_dataset: cannot create output directories under " + out_dir);

    int n_empty = static_cast<int>(std::llround(cfg.empty_frac * cfg.n));
    std::vector<int> order(static_cast<size_t>(cfg.n));
    for (int i = 0; i < cfg.n; ++i) order[static_cast<size_t>(i)] = i;
    {
        auto shuffle_rng = make_rng(cfg.seed, 0x5E1);
        std::shuffle(order.begin(), order.end(), shuffle_rng);
    }
    std::vector<bool> empty_mask_flag(static_cast<size_t>(cfg.n), false);
    for (int i = 0; i < n_empty; ++i) empty_mask_flag[static_cast<size_t>(order[static_cast<size_t>(i)])] = true;

    DatasetManifest m;
    m.base_dir = fs::absolute(root);
    const int S = cfg.size;
    for (int idx = 0; idx < cfg.n; ++idx) {
        auto rng = make_rng(cfg.seed, static_cast<uint64_t>(idx) + 1);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        detail::NoiseField bg(rng), wound_tex(rng);
        // skin-ish background base colour
        double base_r = 150 + 70 * u(rng), base_g = 100 + 60 * u(rng), base_b = 80 + 50 * u(rng);

        std::vector<detail::Ellipse> blobs;
        if (!empty_mask_flag[static_cast<size_t>(idx)]) {
            int count = 1 + (u(rng) < 0.35 ? 1 : 0);
            for (int b = 0; b < count; ++b) {
                double target = cfg.blob_min_frac +
                                u(rng) * (cfg.blob_max_frac / count * 0.85 - cfg.blob_min_frac);
                double area = target * S * S;
                double ratio = 0.5 + u(rng);  // axis ratio
                double ax = std::sqrt(area * ratio / M_PI), ay = area / (M_PI * ax);
                ax = std::max(2.0, ax);
                ay = std::max(2.0, ay);
                detail::Ellipse e;
                e.ay = ay;
                e.ax = ax;
                e.rot = u(rng) * M_PI;
                e.cy = ay + 1 + u(rng) * std::max(1.0, S - 2 * (ay + 1));
                e.cx = ax + 1 + u(rng) * std::max(1.0, S - 2 * (ax + 1));
                blobs.push_back(e);
            }
        }

        MaskBin mask(S, S);
        auto rasterize = [&]() {
            std::fill(mask.data.begin(), mask.data.end(), 0);
            for (int y = 0; y < S; ++y)
                for (int x = 0; x < S; ++x)
                    for (const auto& e : blobs)
                        if (e.contains(y, x)) {
                            mask.at(y, x) = 1;
                            break;
                        }
        };
        rasterize();
        // pixel-count guardrails: shrink or grow until within the bounds
        if (!blobs.empty()) {
            int64_t lo = static_cast<int64_t>(cfg.blob_min_frac * S * S);
            int64_t hi = static_cast<int64_t>(cfg.blob_max_frac * S * S);
            for (int guard = 0; guard < 64; ++guard) {
                int64_t area = mask.positive_count();
                if (area > hi) {
                    for (auto& e : blobs) {
                        e.ay *= 0.92;
                        e.ax *= 0.92;
                    }
                } else if (area < lo) {
                    for (auto& e : blobs) {
                        e.ay = std::min(e.ay * 1.08, S / 2.0);
                        e.ax = std::min(e.ax * 1.08, S / 2.0);
                    }
                } else {
                    break;
                }
                rasterize();
            }
        }

        ImageU8 img(S, S);
        std::normal_distribution<double> speckle(0.0, 6.0);
        for (int y = 0; y < S; ++y)
            for (int x = 0; x < S; ++x) {
                double fy = static_cast<double>(y) / S, fx = static_cast<double>(x) / S;
                double shade = 0.75 + 0.5 * bg(fy, fx);
                double r = base_r * shade, g = base_g * shade, b = base_b * shade;
                if (mask.at(y, x)) {
                    double t = wound_tex(fy * 2, fx * 2);
                    r = 120 + 90 * t;
                    g = 30 + 40 * t;
                    b = 25 + 30 * t;
                }
                img.at(y, x, 0) = static_cast<uint8_t>(std::clamp(std::lround(r + speckle(rng)), 0L, 255L));
                img.at(y, x, 1) = static_cast<uint8_t>(std::clamp(std::lround(g + speckle(rng)), 0L, 255L));
                img.at(y, x, 2) = static_cast<uint8_t>(std::clamp(std::lround(b + speckle(rng)), 0L, 255L));
            }

        char name[32];
        std::snprintf(name, sizeof name, "%04d", idx);
        std::string img_rel = std::string("images/") + name + ".png";
        std::string mask_rel = std::string("masks/") + name + ".png";
        write_image_png((root / img_rel).string(), img);
        write_mask_png((root / mask_rel).string(), mask);
        m.entries.push_back({img_rel, mask_rel, cfg.split, cfg.source});
    }
    save_manifest(m, (root / "manifest.json").string());
    return m;
}

// Loads a manifest split into memory at the requested square size
// (0 keeps native sizes).
inline std::vector<Sample> load_split(const DatasetManifest& m, const std::string& split, int image_size) {
    std::vector<Sample> out;
    for (const auto& e : m.entries) {
        if (e.split != split) continue;
        Sample s;
        s.id = std::filesystem::path(e.image).stem().string();
        s.source = e.source;
        s.image = read_image(m.resolve(e.image).string());
        if (!e.mask.empty()) s.mask = read_mask(m.resolve(e.mask).string());
        if (image_size > 0 && (s.image.height != image_size || s.image.width != image_size)) {
            s.image = resize_image(s.image, image_size, image_size);
            if (s.mask.size() > 0) s.mask = resize_mask(s.mask, image_size, image_size);
        }
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace cws
