#pragma once

#include <json.hpp>

#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "cws/model.hpp"
#include "cws/optim.hpp"

namespace cws {

struct Provenance {
    uint64_t seed = 0;
    int fold = 0;
    int best_epoch = 0;
    std::map<std::string, int> source_mix;  // training sample counts by source tag
    std::string freeze_scope = "none";
};

// Versioned archive: model config, parameter/buffer blobs and the EMA shadow.
struct Checkpoint {
    static constexpr int kVersion = 1;
    ModelConfig config;
    Provenance provenance;
    std::vector<std::pair<std::string, Tensor>> params;
    std::vector<std::pair<std::string, Tensor>> buffers;
    std::vector<std::pair<std::string, Tensor>> ema;
};

namespace detail {

constexpr char kCkptMagic[8] = {'C', 'W', 'S', 'C', 'K', 'P', 'T', '\n'};

inline nlohmann::json blob_index(const std::vector<std::pair<std::string, Tensor>>& blobs) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& [name, t] : blobs) arr.push_back({{"name", name}, {"shape", t.shape()}});
    return arr;
}

inline void write_blobs(std::ofstream& out, const std::vector<std::pair<std::string, Tensor>>& blobs) {
    for (const auto& [name, t] : blobs)
        out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
}

inline std::vector<std::pair<std::string, Tensor>> read_blobs(std::ifstream& in, const nlohmann::json& index,
                                                              const std::string& path) {
    std::vector<std::pair<std::string, Tensor>> blobs;
    for (const auto& item : index) {
        Shape shape = item.at("shape").get<Shape>();
        Tensor t(shape);
        in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
        if (!in) throw std::runtime_error("checkpoint truncated: " + path);
        blobs.emplace_back(item.at("name").get<std::string>(), std::move(t));
    }
    return blobs;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    nlohmann::json header;
    header["version"] = Checkpoint::kVersion;
    header["model_config"] = model_config_to_json(ck.config);
    header["provenance"] = {{"seed", ck.provenance.seed},
                            {"fold", ck.provenance.fold},
                            {"best_epoch", ck.provenance.best_epoch},
                            {"source_mix", ck.provenance.source_mix},
                            {"freeze_scope", ck.provenance.freeze_scope}};
    header["params"] = detail::blob_index(ck.params);
    header["buffers"] = detail::blob_index(ck.buffers);
    header["ema"] = detail::blob_index(ck.ema);
    std::string hs = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out.write(detail::kCkptMagic, 8);
    uint64_t len = hs.size();
    out.write(reinterpret_cast<const char*>(&len), 8);
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    detail::write_blobs(out, ck.params);
    detail::write_blobs(out, ck.buffers);
    detail::write_blobs(out, ck.ema);
    if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, detail::kCkptMagic, 8) != 0)
        throw std::runtime_error("not a checkpoint file: " + path);
    uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), 8);
    if (!in || len == 0 || len > (1ULL << 30)) throw std::runtime_error("corrupt checkpoint header: " + path);
    std::string hs(len, '\0');
    in.read(hs.data(), static_cast<std::streamsize>(len));
    if (!in) throw std::runtime_error("corrupt checkpoint header: " + path);
    nlohmann::json header = nlohmann::json::parse(hs);
    int version = header.at("version").get<int>();
    if (version != Checkpoint::kVersion)
        throw std::runtime_error("checkpoint version " + std::to_string(version) + " not supported (expected " +
                                 std::to_string(Checkpoint::kVersion) + "): " + path);
    Checkpoint ck;
    ck.config = model_config_from_json(header.at("model_config"));
    const auto& jp = header.at("provenance");
    ck.provenance.seed = jp.at("seed").get<uint64_t>();
    ck.provenance.fold = jp.at("fold").get<int>();
    ck.provenance.best_epoch = jp.at("best_epoch").get<int>();
    ck.provenance.source_mix = jp.at("source_mix").get<std::map<std::string, int>>();
    ck.provenance.freeze_scope = jp.value("freeze_scope", "none");
    ck.params = detail::read_blobs(in, header.at("params"), path);
    ck.buffers = detail::read_blobs(in, header.at("buffers"), path);
    ck.ema = detail::read_blobs(in, header.at("ema"), path);
    return ck;
}

inline Checkpoint checkpoint_from_model(WoundSegModel& model, const EmaState& ema, Provenance prov) {
    Checkpoint ck;
    ck.config = model.config();
    ck.provenance = std::move(prov);
    for (auto& p : model.named_parameters()) ck.params.emplace_back(p.name, p.var.value());
    for (auto& b : model.named_buffers()) ck.buffers.emplace_back(b.name, *b.tensor);
    for (const auto& [name, t] : ema.shadow()) ck.ema.emplace_back(name, t);
    return ck;
}

// Loads parameters/buffers into a model built from a compatible config.
// Set use_ema to load the EMA shadow values instead of the raw parameters.
inline void apply_checkpoint(const Checkpoint& ck, WoundSegModel& model, bool use_ema = false) {
    auto params = model.named_parameters();
    const auto& source = use_ema && !ck.ema.empty() ? ck.ema : ck.params;
    if (params.size() != source.size())
        throw std::runtime_error("checkpoint/model parameter count mismatch");
    for (size_t i = 0; i < params.size(); ++i) {
        if (params[i].name != source[i].first)
            throw std::runtime_error("checkpoint parameter order mismatch at " + params[i].name);
        if (!(params[i].var.value().shape() == source[i].second.shape()))
            throw std::runtime_error("checkpoint shape mismatch at " + params[i].name);
        params[i].var.value() = source[i].second;
    }
    auto buffers = model.named_buffers();
    if (buffers.size() != ck.buffers.size()) throw std::runtime_error("checkpoint/model buffer count mismatch");
    for (size_t i = 0; i < buffers.size(); ++i) {
        if (buffers[i].name != ck.buffers[i].first)
            throw std::runtime_error("checkpoint buffer order mismatch at " + buffers[i].name);
        *buffers[i].tensor = ck.buffers[i].second;
    }
}

// Structural compatibility for warm starts: identical architecture,
// regardless of init seed.
inline bool config_compatible(const ModelConfig& a, const ModelConfig& b) {
    ModelConfig a2 = a, b2 = b;
    a2.seed = 0;
    b2.seed = 0;
    return model_config_to_json(a2) == model_config_to_json(b2);
}

}  // namespace cws
