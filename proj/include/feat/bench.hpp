#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "feat/attention_baseline.hpp"
#include "feat/channel_attention.hpp"
#include "feat/rng.hpp"
#include "feat/tensor.hpp"
#include "feat/wkv.hpp"

namespace feat {

// Single-threaded wall-clock benchmark of the attention kernels at a ladder
// of token counts. Rows carry the median and the 10th/90th percentiles over
// the repetitions; sizes whose median falls under 100x the measured timer
// resolution are flagged as excluded.
struct BenchRow {
    std::string kernel;
    int64_t tokens = 0;
    int64_t d = 0;
    double median_ns = 0;
    double p10_ns = 0;
    double p90_ns = 0;
    bool excluded = false;
    std::string note;
};

namespace detail {

inline double timer_resolution_ns() {
    using clock = std::chrono::steady_clock;
    double best = 1e9;
    for (int i = 0; i < 64; ++i) {
        auto a = clock::now();
        auto b = clock::now();
        while (b == a) b = clock::now();
        best = std::min(best,
                        static_cast<double>(
                            std::chrono::duration_cast<std::chrono::nanoseconds>(b - a).count()));
    }
    return std::max(best, 1.0);
}

template <class Fn>
BenchRow time_kernel(const std::string& name, int64_t tokens, int64_t d, int reps, Fn&& fn) {
    using clock = std::chrono::steady_clock;
    fn();  // warm up
    std::vector<double> ns(static_cast<size_t>(reps));
    for (int r = 0; r < reps; ++r) {
        auto a = clock::now();
        fn();
        auto b = clock::now();
        ns[static_cast<size_t>(r)] = static_cast<double>(
            std::chrono::duration_cast<std::chrono::nanoseconds>(b - a).count());
    }
    std::sort(ns.begin(), ns.end());
    auto pct = [&](double q) {
        size_t idx = static_cast<size_t>(q * static_cast<double>(ns.size() - 1) + 0.5);
        return ns[std::min(idx, ns.size() - 1)];
    };
    BenchRow row{name, tokens, d, pct(0.5), pct(0.1), pct(0.9)};
    double res = timer_resolution_ns();
    if (row.median_ns < 100.0 * res) {
        row.excluded = true;
        row.note = "median below 100x timer resolution";
    }
    return row;
}

}  // namespace detail

inline std::vector<BenchRow> run_bench(const std::vector<int64_t>& token_counts, int64_t d,
                                       int reps = 31, uint64_t seed = 7) {
    if (reps < 30) throw ConfigError("bench: at least 30 repetitions required");
    std::vector<BenchRow> rows;
    for (int64_t t : token_counts) {
        RngStream rng(seed);
        Tensor<float> k({t, d}), v({t, d}), q({t, d});
        rng.fill_gaussian(k, 0.5);
        rng.fill_gaussian(v);
        rng.fill_gaussian(q);
        Tensor<float> w({d}), u({d});
        rng.fill_gaussian(w);
        rng.fill_gaussian(u, 0.1);
        Tensor<float> out({t, d});

        rows.push_back(detail::time_kernel("wkv_scan", t, d, reps, [&] {
            wkv_forward_batched(k, v, w, u, t, out);
        }));
        rows.push_back(detail::time_kernel("channel_attention", t, d, reps, [&] {
            channel_attention_kernel(q, k, v, 1.0f, out);
        }));
        rows.push_back(detail::time_kernel("quadratic_attention", t, d, reps, [&] {
            softmax_attention_kernel(q, k, v, out);
        }));
    }
    return rows;
}

inline void write_bench_csv(const std::string& path, const std::vector<BenchRow>& rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ConfigError("bench: cannot open " + path);
    out << "kernel,T,D,median_ns,p10_ns,p90_ns\n";
    for (const auto& r : rows) {
        if (r.excluded) continue;
        out << r.kernel << "," << r.tokens << "," << r.d << "," << r.median_ns << "," << r.p10_ns
            << "," << r.p90_ns << "\n";
    }
}

// Median-runtime ratio between consecutive doublings for one kernel,
// restricted to token counts >= min_tokens. Returns max ratio observed.
inline double max_doubling_ratio(const std::vector<BenchRow>& rows, const std::string& kernel,
                                 int64_t min_tokens) {
    double worst = 0.0;
    for (const auto& a : rows) {
        if (a.kernel != kernel || a.excluded || a.tokens < min_tokens) continue;
        for (const auto& b : rows) {
            if (b.kernel != kernel || b.excluded || b.tokens != 2 * a.tokens) continue;
            worst = std::max(worst, b.median_ns / a.median_ns);
        }
    }
    return worst;
}

inline double min_doubling_ratio(const std::vector<BenchRow>& rows, const std::string& kernel,
                                 int64_t min_tokens) {
    double best = 1e30;
    for (const auto& a : rows) {
        if (a.kernel != kernel || a.excluded || a.tokens < min_tokens) continue;
        for (const auto& b : rows) {
            if (b.kernel != kernel || b.excluded || b.tokens != 2 * a.tokens) continue;
            best = std::min(best, b.median_ns / a.median_ns);
        }
    }
    return best;
}

}  // namespace feat
