#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "feat/backbone.hpp"
#include "feat/diffusion.hpp"
#include "feat/tensor.hpp"

namespace feat {

// Checkpoint container: magic "FEATCKP1", a little-endian u64 header length,
// a JSON header carrying the format version, the full model configuration and
// the array directory, then the raw float32 payload. EMA parameters are
// stored alongside the live ones under the "ema." namespace.

inline constexpr char kCheckpointMagic[8] = {'F', 'E', 'A', 'T', 'C', 'K', 'P', '1'};
inline constexpr uint32_t kCheckpointVersion = 1;

namespace detail {
inline void require_little_endian() {
    const uint16_t probe = 0x0102;
    uint8_t bytes[2];
    std::memcpy(bytes, &probe, 2);
    if (bytes[0] != 0x02) throw ConfigError("checkpoint: little-endian host required");
}
}  // namespace detail

inline nlohmann::json config_to_json(const ModelConfig& cfg) {
    return nlohmann::json{
        {"d", cfg.d},
        {"n_triplets", cfg.n_triplets},
        {"patch", cfg.patch},
        {"frames", cfg.frames},
        {"channels", cfg.channels},
        {"height", cfg.height},
        {"width", cfg.width},
        {"ffn_mult", cfg.ffn_mult},
        {"t_max", cfg.t_max},
        {"st_attention", cfg.st_attention == StAttention::Wkv ? "wkv" : "quadratic"},
        {"use_channel_block", cfg.use_channel_block},
        {"use_resvgm", cfg.use_resvgm},
    };
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig cfg;
    cfg.d = j.at("d").get<int64_t>();
    cfg.n_triplets = j.at("n_triplets").get<int64_t>();
    cfg.patch = j.at("patch").get<int64_t>();
    cfg.frames = j.at("frames").get<int64_t>();
    cfg.channels = j.at("channels").get<int64_t>();
    cfg.height = j.at("height").get<int64_t>();
    cfg.width = j.at("width").get<int64_t>();
    cfg.ffn_mult = j.at("ffn_mult").get<int64_t>();
    cfg.t_max = j.at("t_max").get<int64_t>();
    cfg.st_attention = j.at("st_attention").get<std::string>() == "wkv" ? StAttention::Wkv
                                                                        : StAttention::Quadratic;
    cfg.use_channel_block = j.at("use_channel_block").get<bool>();
    cfg.use_resvgm = j.at("use_resvgm").get<bool>();
    return cfg;
}

struct CheckpointData {
    ModelConfig cfg;
    std::vector<std::pair<std::string, Tensor<float>>> arrays;

    const Tensor<float>* find(const std::string& name) const {
        for (const auto& [n, t] : arrays)
            if (n == name) return &t;
        return nullptr;
    }
};

inline void save_checkpoint(const std::string& path, const Model<float>& model,
                            const EmaState* ema = nullptr) {
    detail::require_little_endian();
    nlohmann::json header;
    header["version"] = kCheckpointVersion;
    header["config"] = config_to_json(model.cfg);

    nlohmann::json dir = nlohmann::json::array();
    int64_t offset = 0;
    auto add_entry = [&](const std::string& name, const Shape& shape) {
        int64_t count = shape_numel(shape);
        dir.push_back({{"name", name}, {"shape", shape}, {"offset", offset}, {"count", count}});
        offset += count;
    };
    for (size_t i = 0; i < model.layout.size(); ++i)
        add_entry(model.layout[i].name, model.layout[i].shape);
    if (ema) {
        if (static_cast<int64_t>(ema->shadow.size()) != model.total_params())
            throw ShapeError("checkpoint: ema size does not mirror model");
        for (size_t i = 0; i < model.layout.size(); ++i)
            add_entry("ema." + model.layout[i].name, model.layout[i].shape);
    }
    header["arrays"] = dir;

    std::string header_str = header.dump();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("checkpoint: cannot open " + path + " for writing");
    out.write(kCheckpointMagic, 8);
    uint64_t hlen = header_str.size();
    out.write(reinterpret_cast<const char*>(&hlen), 8);
    out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    for (const auto& p : model.params)
        out.write(reinterpret_cast<const char*>(p->value.data()),
                  static_cast<std::streamsize>(p->value.numel() * sizeof(float)));
    if (ema)
        out.write(reinterpret_cast<const char*>(ema->shadow.data()),
                  static_cast<std::streamsize>(ema->shadow.size() * sizeof(float)));
    if (!out) throw ConfigError("checkpoint: write failed for " + path);
}

inline CheckpointData load_checkpoint(const std::string& path) {
    detail::require_little_endian();
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("checkpoint: cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw ConfigError("checkpoint: bad magic in " + path);
    uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), 8);
    std::string header_str(hlen, '\0');
    in.read(header_str.data(), static_cast<std::streamsize>(hlen));
    if (!in) throw ConfigError("checkpoint: truncated header in " + path);
    nlohmann::json header = nlohmann::json::parse(header_str);
    if (header.at("version").get<uint32_t>() != kCheckpointVersion)
        throw ConfigError("checkpoint: unsupported version");

    CheckpointData data;
    data.cfg = config_from_json(header.at("config"));
    for (const auto& entry : header.at("arrays")) {
        Shape shape = entry.at("shape").get<Shape>();
        Tensor<float> t(shape);
        in.read(reinterpret_cast<char*>(t.data()),
                static_cast<std::streamsize>(t.numel() * sizeof(float)));
        if (!in) throw ConfigError("checkpoint: truncated payload in " + path);
        data.arrays.emplace_back(entry.at("name").get<std::string>(), std::move(t));
    }
    return data;
}

// Rebuilds a model from a checkpoint; use_ema selects the shadow parameters.
inline Model<float> model_from_checkpoint(const CheckpointData& data, bool use_ema) {
    Model<float> model = Model<float>::init(data.cfg, RngStream(0));
    for (size_t i = 0; i < model.layout.size(); ++i) {
        const std::string& name = model.layout[i].name;
        const Tensor<float>* src = use_ema ? data.find("ema." + name) : data.find(name);
        if (!src && use_ema) src = data.find(name);
        if (!src) throw ConfigError("checkpoint: missing array " + name);
        if (src->shape() != model.layout[i].shape)
            throw ShapeError("checkpoint: shape mismatch for " + name);
        model.params[i]->value = *src;
    }
    return model;
}

// FNV-1a over the file bytes; used to tie sample manifests to checkpoints.
inline std::string file_fingerprint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("fingerprint: cannot open " + path);
    uint64_t h = 0xCBF29CE484222325ULL;
    char buf[65536];
    while (in) {
        in.read(buf, sizeof(buf));
        std::streamsize got = in.gcount();
        for (std::streamsize i = 0; i < got; ++i)
            h = (h ^ static_cast<unsigned char>(buf[i])) * 0x100000001B3ULL;
    }
    char hex[17];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
    return std::string(hex);
}

}  // namespace feat
