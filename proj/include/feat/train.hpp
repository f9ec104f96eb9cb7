#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <string>
#include <vector>

#include "feat/backbone.hpp"
#include "feat/checkpoint.hpp"
#include "feat/config_file.hpp"
#include "feat/dataset.hpp"
#include "feat/diffusion.hpp"
#include "feat/optimizer.hpp"
#include "feat/rng.hpp"

namespace feat {

// Substream purposes; fixed so that toggling one knob (e.g. augmentation)
// cannot disturb draws consumed elsewhere.
enum RngPurpose : uint64_t {
    kRngInit = 1,
    kRngTrainData = 2,
    kRngAugment = 3,
    kRngSteps = 4,
    kRngValData = 5,
    kRngValNoise = 6,
    kRngSample = 7,
};

struct TrainConfig {
    ModelConfig model;
    SyntheticVideoSpec data;

    double beta_start = 1e-4;
    double beta_end = 2e-2;

    double lr = 1e-4;
    double weight_decay = 0.0;
    int64_t batch = 2;
    int64_t steps = 200;
    double ema_decay = 0.9999;
    bool flip = true;
    uint64_t seed = 0;
    int64_t ckpt_every = 500;

    int64_t train_clips = 64;
    int64_t val_clips = 8;
    int64_t val_pairs = 4;
    int64_t val_every = 0;        // 0: only at the end
    double early_stop_val = 0.0;  // 0: disabled

    std::string out_dir = "out";

    void validate() const {
        model.validate();
        if (model.n_triplets < 1) throw ConfigError("train: n_triplets must be >= 1");
        if (lr <= 0) throw ConfigError("train: lr must be > 0");
        if (steps < 1 || batch < 1) throw ConfigError("train: steps and batch must be >= 1");
        if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw ConfigError("train: bad ema decay");
        if (train_clips < 1 || val_clips < 1 || val_pairs < 1)
            throw ConfigError("train: clip counts must be >= 1");
    }

    // Clip geometry always follows the model configuration.
    SyntheticVideoSpec data_spec(uint64_t data_seed) const {
        SyntheticVideoSpec s = data;
        s.frames = model.frames;
        s.height = model.height;
        s.width = model.width;
        s.channels = model.channels;
        s.seed = data_seed;
        return s;
    }
};

struct TrainResult {
    std::vector<double> losses;
    double final_val_mse = 0.0;
    int64_t steps_run = 0;
    bool aborted = false;
    std::string checkpoint_path;
    std::string loss_csv_path;
    std::string init_fingerprint;
};

namespace detail {

inline void flatten_params(const Model<float>& model, std::vector<float>& out) {
    out.clear();
    out.reserve(static_cast<size_t>(model.total_params()));
    for (const auto& p : model.params)
        out.insert(out.end(), p->value.vec().begin(), p->value.vec().end());
}

inline std::string params_fingerprint(const Model<float>& model) {
    uint64_t h = 0xCBF29CE484222325ULL;
    for (const auto& p : model.params) {
        const auto& v = p->value.vec();
        const unsigned char* bytes = reinterpret_cast<const unsigned char*>(v.data());
        for (size_t i = 0; i < v.size() * sizeof(float); ++i)
            h = (h ^ bytes[i]) * 0x100000001B3ULL;
    }
    char hex[17];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
    return std::string(hex);
}

inline bool params_finite(const Model<float>& model) {
    for (const auto& p : model.params)
        if (!p->value.all_finite()) return false;
    return true;
}

struct ValItem {
    Tensor<float> x_t;
    Tensor<float> eps;
    int64_t t;
};

inline std::vector<ValItem> build_val_items(const TrainConfig& cfg,
                                            const DiffusionSchedule& schedule) {
    RngStream val_rng = RngStream::derive(cfg.seed, kRngValNoise);
    auto clips = gen_dataset(cfg.data_spec(RngStream::derive(cfg.seed, kRngValData).seed),
                             cfg.val_clips);
    std::vector<ValItem> items;
    for (const auto& clip : clips) {
        for (int64_t j = 0; j < cfg.val_pairs; ++j) {
            ValItem it;
            it.t = static_cast<int64_t>(val_rng.next_below(static_cast<uint64_t>(schedule.steps))) + 1;
            it.eps = Tensor<float>(clip.shape());
            val_rng.fill_gaussian(it.eps);
            it.x_t = q_sample(clip, it.t, it.eps, schedule);
            items.push_back(std::move(it));
        }
    }
    return items;
}

// Mean per-element squared error of the noise prediction over the fixed
// validation set. Evaluated with gradients disabled.
inline double validation_mse(Model<float>& model, const std::vector<ValItem>& items) {
    model.set_requires_grad(false);
    double total = 0.0;
    for (const auto& it : items) {
        Var<float> pred = model.forward(it.x_t, it.t);
        double acc = 0.0;
        for (int64_t i = 0; i < pred->numel(); ++i) {
            double d = static_cast<double>(pred->value[i]) - static_cast<double>(it.eps[i]);
            acc += d * d;
        }
        total += acc / static_cast<double>(pred->numel());
    }
    model.set_requires_grad(true);
    return total / static_cast<double>(items.size());
}

}  // namespace detail

inline TrainResult train(const TrainConfig& cfg) {
    cfg.validate();
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);

    DiffusionSchedule schedule = make_schedule(cfg.model.t_max, cfg.beta_start, cfg.beta_end);
    Model<float> model = Model<float>::init(cfg.model, RngStream::derive(cfg.seed, kRngInit));
    AdamW opt = AdamW::init(model, cfg.lr, cfg.weight_decay);

    auto train_clips =
        gen_dataset(cfg.data_spec(RngStream::derive(cfg.seed, kRngTrainData).seed), cfg.train_clips);
    auto val_items = detail::build_val_items(cfg, schedule);

    RngStream step_rng = RngStream::derive(cfg.seed, kRngSteps);
    RngStream aug_rng = RngStream::derive(cfg.seed, kRngAugment);

    std::vector<float> flat;
    detail::flatten_params(model, flat);
    EmaState ema = EmaState::init(cfg.ema_decay, flat);

    TrainResult result;
    result.init_fingerprint = detail::params_fingerprint(model);
    result.loss_csv_path = cfg.out_dir + "/loss.csv";
    std::ofstream csv(result.loss_csv_path, std::ios::trunc);
    if (!csv) throw ConfigError("train: cannot open " + result.loss_csv_path);
    csv << "step,loss,wall_ms\n";

    std::string last_good;
    auto save = [&](const std::string& name) {
        std::string path = cfg.out_dir + "/" + name;
        save_checkpoint(path, model, &ema);
        last_good = path;
        return path;
    };

    auto start = std::chrono::steady_clock::now();
    auto wall_ms = [&] {
        return std::chrono::duration_cast<std::chrono::milliseconds>(
                   std::chrono::steady_clock::now() - start)
            .count();
    };

    for (int64_t step = 1; step <= cfg.steps; ++step) {
        double batch_loss = 0.0;
        bool bad = false;
        try {
            for (int64_t b = 0; b < cfg.batch; ++b) {
                int64_t idx = static_cast<int64_t>(
                    step_rng.next_below(static_cast<uint64_t>(train_clips.size())));
                Tensor<float> clip = train_clips[static_cast<size_t>(idx)];
                if (cfg.flip && aug_rng.next_uniform() < 0.5) clip = hflip(clip);
                auto denoiser = [&](const Tensor<float>& xt, int64_t t) {
                    return model.forward(xt, t);
                };
                Var<float> loss = elbo_loss<float>(denoiser, clip, schedule, step_rng);
                Var<float> scaled = scale(loss, 1.0f / static_cast<float>(cfg.batch));
                backward(scaled);
                batch_loss += static_cast<double>(loss->value[0]) / static_cast<double>(cfg.batch);
            }
        } catch (const NumericError&) {
            bad = true;
        }
        if (bad || !std::isfinite(batch_loss)) {
            result.aborted = true;
            if (detail::params_finite(model)) last_good = save("ckpt_abort.feat");
            break;
        }
        opt.step(model);
        detail::flatten_params(model, flat);
        ema.update(flat);

        result.losses.push_back(batch_loss);
        result.steps_run = step;
        csv << step << "," << batch_loss << "," << wall_ms() << "\n";

        if (cfg.ckpt_every > 0 && step % cfg.ckpt_every == 0) {
            char name[64];
            std::snprintf(name, sizeof(name), "ckpt_step%06lld.feat",
                          static_cast<long long>(step));
            save(name);
        }
        if (cfg.val_every > 0 && cfg.early_stop_val > 0.0 && step % cfg.val_every == 0 &&
            step < cfg.steps) {
            if (detail::validation_mse(model, val_items) < cfg.early_stop_val) break;
        }
    }
    csv.close();

    if (!result.aborted) {
        result.checkpoint_path = save("ckpt_final.feat");
        result.final_val_mse = detail::validation_mse(model, val_items);
    } else {
        result.checkpoint_path = last_good;
        result.final_val_mse = std::numeric_limits<double>::quiet_NaN();
    }
    return result;
}

// ---------------------------------------------------------------------------
// Ablation: the four architecture variants trained under an identical budget
// and seed set, compared on final validation noise-prediction error.
// ---------------------------------------------------------------------------

struct AblateVariant {
    std::string name;
    StAttention st;
    bool channel;
    bool resvgm;
};

inline std::vector<AblateVariant> default_ablate_variants() {
    return {
        {"baseline", StAttention::Quadratic, false, false},
        {"wkv", StAttention::Wkv, false, false},
        {"wkv_channel", StAttention::Wkv, true, false},
        {"full", StAttention::Wkv, true, true},
    };
}

struct AblateResult {
    std::vector<AblateVariant> variants;
    std::vector<uint64_t> seeds;
    // val_mse[variant][seed]
    std::vector<std::vector<double>> val_mse;
    int full_wins_vs_baseline = 0;

    double mean_mse(size_t variant) const {
        double acc = 0;
        for (double v : val_mse[variant]) acc += v;
        return acc / static_cast<double>(val_mse[variant].size());
    }
};

inline AblateResult ablate(const TrainConfig& base, const std::vector<uint64_t>& seeds,
                           const std::vector<AblateVariant>& variants = default_ablate_variants()) {
    AblateResult result;
    result.variants = variants;
    result.seeds = seeds;
    result.val_mse.assign(variants.size(), {});
    for (size_t vi = 0; vi < variants.size(); ++vi) {
        for (uint64_t seed : seeds) {
            TrainConfig cfg = base;
            cfg.model.st_attention = variants[vi].st;
            cfg.model.use_channel_block = variants[vi].channel;
            cfg.model.use_resvgm = variants[vi].resvgm;
            cfg.seed = seed;
            cfg.ckpt_every = 0;
            cfg.val_every = 0;
            cfg.early_stop_val = 0.0;
            cfg.out_dir = base.out_dir + "/" + variants[vi].name + "_s" + std::to_string(seed);
            TrainResult r = train(cfg);
            if (r.aborted) throw NumericError("ablate: variant " + variants[vi].name + " aborted");
            result.val_mse[vi].push_back(r.final_val_mse);
        }
    }
    size_t baseline = 0, full = variants.size() - 1;
    for (size_t s = 0; s < seeds.size(); ++s)
        if (result.val_mse[full][s] < result.val_mse[baseline][s]) ++result.full_wins_vs_baseline;
    return result;
}

inline void write_ablate_csv(const std::string& path, const AblateResult& r) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ConfigError("ablate: cannot open " + path);
    out << "variant,seed,val_mse\n";
    for (size_t vi = 0; vi < r.variants.size(); ++vi)
        for (size_t si = 0; si < r.seeds.size(); ++si)
            out << r.variants[vi].name << "," << r.seeds[si] << "," << r.val_mse[vi][si] << "\n";
}

// ---------------------------------------------------------------------------
// key=value configuration mapping
// ---------------------------------------------------------------------------

inline TrainConfig train_config_from(const KeyValueConfig& kv) {
    static const std::set<std::string> known = {
        "model.d",          "model.triplets",    "model.patch",      "model.frames",
        "model.channels",   "model.height",      "model.width",      "model.ffn_mult",
        "model.t_max",      "model.attention",   "model.channel_block", "model.resvgm",
        "diffusion.beta_start", "diffusion.beta_end",
        "train.lr",         "train.weight_decay", "train.batch",     "train.steps",
        "train.ema_decay",  "train.flip",        "train.ckpt_every", "train.clips",
        "train.val_clips",  "train.val_pairs",   "train.val_every",  "train.early_stop_val",
        "data.blobs_min",   "data.blobs_max",    "data.radius_min",  "data.radius_max",
        "data.speed_min",   "data.speed_max",
    };
    for (const auto& [key, value] : kv.entries())
        if (!known.count(key)) throw ConfigError("config: unknown key '" + key + "'");

    TrainConfig cfg;
    cfg.model.d = kv.get_int("model.d", cfg.model.d);
    cfg.model.n_triplets = kv.get_int("model.triplets", cfg.model.n_triplets);
    cfg.model.patch = kv.get_int("model.patch", cfg.model.patch);
    cfg.model.frames = kv.get_int("model.frames", cfg.model.frames);
    cfg.model.channels = kv.get_int("model.channels", cfg.model.channels);
    cfg.model.height = kv.get_int("model.height", cfg.model.height);
    cfg.model.width = kv.get_int("model.width", cfg.model.width);
    cfg.model.ffn_mult = kv.get_int("model.ffn_mult", cfg.model.ffn_mult);
    cfg.model.t_max = kv.get_int("model.t_max", cfg.model.t_max);
    std::string attn = kv.get_string("model.attention", "wkv");
    if (attn == "wkv")
        cfg.model.st_attention = StAttention::Wkv;
    else if (attn == "quadratic")
        cfg.model.st_attention = StAttention::Quadratic;
    else
        throw ConfigError("config: model.attention must be wkv or quadratic");
    cfg.model.use_channel_block = kv.get_bool("model.channel_block", cfg.model.use_channel_block);
    cfg.model.use_resvgm = kv.get_bool("model.resvgm", cfg.model.use_resvgm);

    cfg.beta_start = kv.get_double("diffusion.beta_start", cfg.beta_start);
    cfg.beta_end = kv.get_double("diffusion.beta_end", cfg.beta_end);

    cfg.lr = kv.get_double("train.lr", cfg.lr);
    cfg.weight_decay = kv.get_double("train.weight_decay", cfg.weight_decay);
    cfg.batch = kv.get_int("train.batch", cfg.batch);
    cfg.steps = kv.get_int("train.steps", cfg.steps);
    cfg.ema_decay = kv.get_double("train.ema_decay", cfg.ema_decay);
    cfg.flip = kv.get_bool("train.flip", cfg.flip);
    cfg.ckpt_every = kv.get_int("train.ckpt_every", cfg.ckpt_every);
    cfg.train_clips = kv.get_int("train.clips", cfg.train_clips);
    cfg.val_clips = kv.get_int("train.val_clips", cfg.val_clips);
    cfg.val_pairs = kv.get_int("train.val_pairs", cfg.val_pairs);
    cfg.val_every = kv.get_int("train.val_every", cfg.val_every);
    cfg.early_stop_val = kv.get_double("train.early_stop_val", cfg.early_stop_val);

    cfg.data.blobs_min = kv.get_int("data.blobs_min", cfg.data.blobs_min);
    cfg.data.blobs_max = kv.get_int("data.blobs_max", cfg.data.blobs_max);
    cfg.data.radius_min = kv.get_double("data.radius_min", cfg.data.radius_min);
    cfg.data.radius_max = kv.get_double("data.radius_max", cfg.data.radius_max);
    cfg.data.speed_min = kv.get_double("data.speed_min", cfg.data.speed_min);
    cfg.data.speed_max = kv.get_double("data.speed_max", cfg.data.speed_max);
    return cfg;
}

}  // namespace feat
