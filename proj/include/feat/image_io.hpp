#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "feat/tensor.hpp"

namespace feat {

// Frames are written as binary portable graymaps (P5) for single-channel
// clips and portable pixmaps (P6) for three-channel clips; values map from
// [-1, 1] to [0, 255].

namespace detail {
inline unsigned char to_byte(float v) {
    float scaled = (v + 1.0f) * 0.5f * 255.0f;
    return static_cast<unsigned char>(std::clamp(scaled, 0.0f, 255.0f) + 0.5f);
}
}  // namespace detail

inline void write_frame_image(const std::string& path, const Tensor<float>& clip, int64_t frame) {
    int64_t c = clip.dim(1), h = clip.dim(2), w = clip.dim(3);
    if (c != 1 && c != 3) throw ConfigError("image: only 1- or 3-channel frames supported");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("image: cannot open " + path);
    out << (c == 1 ? "P5" : "P6") << "\n" << w << " " << h << "\n255\n";
    std::vector<unsigned char> row(static_cast<size_t>(w * c));
    for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x)
            for (int64_t ch = 0; ch < c; ++ch)
                row[static_cast<size_t>(x * c + ch)] =
                    detail::to_byte(clip[((frame * c + ch) * h + y) * w + x]);
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!out) throw ConfigError("image: write failed for " + path);
}

// Writes all frames plus a JSON manifest tying them to the seed and the
// checkpoint they came from.
inline std::vector<std::string> write_clip(const std::string& dir, const std::string& stem,
                                           const Tensor<float>& clip, uint64_t seed,
                                           const std::string& checkpoint_fingerprint) {
    int64_t frames = clip.dim(0), c = clip.dim(1);
    const char* ext = c == 1 ? ".pgm" : ".ppm";
    std::vector<std::string> files;
    for (int64_t f = 0; f < frames; ++f) {
        char name[64];
        std::snprintf(name, sizeof(name), "%s_f%03d%s", stem.c_str(), static_cast<int>(f), ext);
        write_frame_image(dir + "/" + name, clip, f);
        files.emplace_back(name);
    }
    nlohmann::json manifest{
        {"frames", frames},
        {"channels", c},
        {"height", clip.dim(2)},
        {"width", clip.dim(3)},
        {"seed", seed},
        {"checkpoint_fingerprint", checkpoint_fingerprint},
        {"files", files},
    };
    std::ofstream out(dir + "/" + stem + "_manifest.json", std::ios::trunc);
    if (!out) throw ConfigError("image: cannot write manifest");
    out << manifest.dump(2) << "\n";
    return files;
}

}  // namespace feat
