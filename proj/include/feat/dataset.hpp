#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "feat/rng.hpp"
#include "feat/tensor.hpp"

namespace feat {

// Synthetic clips of soft-edged blobs drifting with constant per-clip
// velocity and reflecting off the image borders. Pixels live in [-1, 1];
// everything is deterministic in (seed, clip index).
struct SyntheticVideoSpec {
    int64_t frames = 8;
    int64_t height = 32;
    int64_t width = 32;
    int64_t channels = 1;
    int64_t blobs_min = 1;
    int64_t blobs_max = 3;
    double radius_min = 3.0;
    double radius_max = 6.0;
    double speed_min = 0.4;
    double speed_max = 1.6;
    uint64_t seed = 0;

    void validate() const {
        if (frames < 1 || height < 4 || width < 4 || channels < 1)
            throw ConfigError("dataset: degenerate clip geometry");
        if (blobs_min < 1 || blobs_max < blobs_min) throw ConfigError("dataset: bad blob count");
        if (!(0.5 <= radius_min && radius_min <= radius_max))
            throw ConfigError("dataset: bad radius range");
        if (radius_max >= 0.5 * static_cast<double>(std::min(height, width)))
            throw ConfigError("dataset: radius too large for the frame");
        if (!(0.0 <= speed_min && speed_min <= speed_max))
            throw ConfigError("dataset: bad speed range");
    }
};

namespace detail {

struct Blob {
    double x, y, vx, vy, radius, brightness;
};

}  // namespace detail

inline Tensor<float> gen_clip(const SyntheticVideoSpec& spec, uint64_t clip_index) {
    spec.validate();
    RngStream rng = RngStream::derive(spec.seed, 0x646174 /* data */ + clip_index * 2654435761ULL);

    int64_t n_blobs =
        spec.blobs_min + static_cast<int64_t>(rng.next_below(
                             static_cast<uint64_t>(spec.blobs_max - spec.blobs_min + 1)));
    std::vector<detail::Blob> blobs;
    for (int64_t b = 0; b < n_blobs; ++b) {
        detail::Blob blob;
        blob.radius = rng.next_range(spec.radius_min, spec.radius_max);
        blob.x = rng.next_range(blob.radius, static_cast<double>(spec.width - 1) - blob.radius);
        blob.y = rng.next_range(blob.radius, static_cast<double>(spec.height - 1) - blob.radius);
        double speed = rng.next_range(spec.speed_min, spec.speed_max);
        double angle = rng.next_range(0.0, 2.0 * M_PI);
        blob.vx = speed * std::cos(angle);
        blob.vy = speed * std::sin(angle);
        blob.brightness = rng.next_range(0.6, 1.0);
        blobs.push_back(blob);
    }

    Tensor<float> clip({spec.frames, spec.channels, spec.height, spec.width}, -1.0f);
    for (int64_t f = 0; f < spec.frames; ++f) {
        for (int64_t y = 0; y < spec.height; ++y) {
            for (int64_t x = 0; x < spec.width; ++x) {
                double intensity = 0.0;
                for (const auto& blob : blobs) {
                    double dx = static_cast<double>(x) - blob.x;
                    double dy = static_cast<double>(y) - blob.y;
                    double sigma = blob.radius * 0.5;
                    intensity +=
                        blob.brightness * std::exp(-0.5 * (dx * dx + dy * dy) / (sigma * sigma));
                }
                float v = static_cast<float>(-1.0 + 2.0 * std::min(1.0, intensity));
                for (int64_t c = 0; c < spec.channels; ++c)
                    clip[((f * spec.channels + c) * spec.height + y) * spec.width + x] = v;
            }
        }
        // advance with reflection off [0, extent-1]
        for (auto& blob : blobs) {
            blob.x += blob.vx;
            blob.y += blob.vy;
            double xmax = static_cast<double>(spec.width - 1);
            double ymax = static_cast<double>(spec.height - 1);
            if (blob.x < 0.0) {
                blob.x = -blob.x;
                blob.vx = -blob.vx;
            } else if (blob.x > xmax) {
                blob.x = 2.0 * xmax - blob.x;
                blob.vx = -blob.vx;
            }
            if (blob.y < 0.0) {
                blob.y = -blob.y;
                blob.vy = -blob.vy;
            } else if (blob.y > ymax) {
                blob.y = 2.0 * ymax - blob.y;
                blob.vy = -blob.vy;
            }
        }
    }
    return clip;
}

inline std::vector<Tensor<float>> gen_dataset(const SyntheticVideoSpec& spec, int64_t n_clips) {
    spec.validate();
    if (n_clips < 1) throw ConfigError("dataset: n_clips must be >= 1");
    std::vector<Tensor<float>> out;
    out.reserve(static_cast<size_t>(n_clips));
    for (int64_t i = 0; i < n_clips; ++i) out.push_back(gen_clip(spec, static_cast<uint64_t>(i)));
    return out;
}

// Intensity-weighted centroid of one frame (channel 0), intensity mapped
// from [-1, 1] to [0, 1]. Used to verify blob kinematics.
inline std::pair<double, double> frame_centroid(const Tensor<float>& clip, int64_t frame) {
    int64_t c = clip.dim(1), h = clip.dim(2), w = clip.dim(3);
    double sx = 0, sy = 0, total = 0;
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            double v = 0.5 * (clip[((frame * c + 0) * h + y) * w + x] + 1.0);
            sx += v * static_cast<double>(x);
            sy += v * static_cast<double>(y);
            total += v;
        }
    if (total <= 0) throw NumericError("frame_centroid: empty frame");
    return {sx / total, sy / total};
}

// Horizontal flip (width axis) of a full clip.
inline Tensor<float> hflip(const Tensor<float>& clip) {
    int64_t f = clip.dim(0), c = clip.dim(1), h = clip.dim(2), w = clip.dim(3);
    Tensor<float> out(clip.shape());
    for (int64_t i = 0; i < f * c * h; ++i)
        for (int64_t x = 0; x < w; ++x) out[i * w + x] = clip[i * w + (w - 1 - x)];
    return out;
}

}  // namespace feat
