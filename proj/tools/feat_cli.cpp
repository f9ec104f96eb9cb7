#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "feat/feat.hpp"
#include "feat/gradient_suite.hpp"

namespace {

feat::TrainConfig load_train_config(const std::string& config_path, uint64_t seed,
                                    const std::string& out_dir) {
    feat::TrainConfig cfg;
    if (!config_path.empty())
        cfg = feat::train_config_from(feat::KeyValueConfig::parse_file(config_path));
    cfg.seed = seed;
    cfg.out_dir = out_dir;
    return cfg;
}

feat::ModelConfig preset_config(const std::string& name) {
    if (name == "feat-s") return feat::feat_s_config();
    if (name == "feat-l") return feat::feat_l_config();
    throw feat::ConfigError("unknown preset '" + name + "' (feat-s, feat-l)");
}

int cmd_train(const std::string& config_path, uint64_t seed, const std::string& out_dir) {
    auto cfg = load_train_config(config_path, seed, out_dir);
    std::printf("training: d=%lld triplets=%lld clip=%lldx%lldx%lldx%lld steps=%lld batch=%lld\n",
                (long long)cfg.model.d, (long long)cfg.model.n_triplets,
                (long long)cfg.model.frames, (long long)cfg.model.channels,
                (long long)cfg.model.height, (long long)cfg.model.width, (long long)cfg.steps,
                (long long)cfg.batch);
    auto result = feat::train(cfg);
    if (result.aborted) {
        std::printf("aborted on non-finite loss after %lld steps; last good checkpoint: %s\n",
                    (long long)result.steps_run, result.checkpoint_path.c_str());
        return 2;
    }
    std::printf("done: steps=%lld final_loss=%.6f val_mse=%.6f\n", (long long)result.steps_run,
                result.losses.empty() ? 0.0 : result.losses.back(), result.final_val_mse);
    std::printf("loss trace: %s\ncheckpoint: %s\n", result.loss_csv_path.c_str(),
                result.checkpoint_path.c_str());
    return 0;
}

int cmd_sample(const std::string& checkpoint, uint64_t seed, const std::string& out_dir,
               int64_t clips, bool use_ema) {
    auto data = feat::load_checkpoint(checkpoint);
    auto model = feat::model_from_checkpoint(data, use_ema);
    model.set_requires_grad(false);
    auto sched = feat::make_schedule(model.cfg.t_max);
    std::filesystem::create_directories(out_dir);
    std::string fingerprint = feat::file_fingerprint(checkpoint);

    std::function<feat::Tensor<float>(const feat::Tensor<float>&, int64_t)> denoiser =
        [&](const feat::Tensor<float>& xt, int64_t t) { return model.forward(xt, t)->value; };
    for (int64_t i = 0; i < clips; ++i) {
        feat::RngStream rng = feat::RngStream::derive(seed + static_cast<uint64_t>(i),
                                                      feat::kRngSample);
        auto clip = feat::sample<float>(
            denoiser,
            {model.cfg.frames, model.cfg.channels, model.cfg.height, model.cfg.width}, sched, rng);
        char stem[32];
        std::snprintf(stem, sizeof(stem), "sample%03lld", (long long)i);
        feat::write_clip(out_dir, stem, clip, seed + static_cast<uint64_t>(i), fingerprint);
        std::printf("wrote %s/%s_* (%lld frames)\n", out_dir.c_str(), stem,
                    (long long)model.cfg.frames);
    }
    return 0;
}

int cmd_bench(const std::string& out_dir, int64_t d, const std::vector<int64_t>& sizes, int reps) {
    std::filesystem::create_directories(out_dir);
    auto rows = feat::run_bench(sizes, d, reps);
    std::string path = out_dir + "/bench.csv";
    feat::write_bench_csv(path, rows);
    std::printf("kernel,T,D,median_ns,p10_ns,p90_ns\n");
    for (const auto& r : rows) {
        if (r.excluded) {
            std::printf("# %s T=%lld excluded: %s\n", r.kernel.c_str(), (long long)r.tokens,
                        r.note.c_str());
            continue;
        }
        std::printf("%s,%lld,%lld,%.0f,%.0f,%.0f\n", r.kernel.c_str(), (long long)r.tokens,
                    (long long)r.d, r.median_ns, r.p10_ns, r.p90_ns);
    }
    for (const char* kernel : {"wkv_scan", "channel_attention", "quadratic_attention"}) {
        double lo = feat::min_doubling_ratio(rows, kernel, sizes.front());
        double hi = feat::max_doubling_ratio(rows, kernel, sizes.front());
        if (hi > 0)
            std::printf("%s doubling ratio: min %.2f max %.2f\n", kernel, lo, hi);
    }
    std::printf("csv: %s\n", path.c_str());
    return 0;
}

int cmd_ablate(const std::string& config_path, uint64_t seed, const std::string& out_dir,
               int64_t n_seeds) {
    auto base = load_train_config(config_path, seed, out_dir);
    std::vector<uint64_t> seeds;
    for (int64_t i = 0; i < n_seeds; ++i) seeds.push_back(seed + static_cast<uint64_t>(i));
    auto result = feat::ablate(base, seeds);
    std::printf("variant");
    for (uint64_t s : seeds) std::printf(",seed%llu", (unsigned long long)s);
    std::printf(",mean\n");
    for (size_t vi = 0; vi < result.variants.size(); ++vi) {
        std::printf("%s", result.variants[vi].name.c_str());
        for (double v : result.val_mse[vi]) std::printf(",%.4f", v);
        std::printf(",%.4f\n", result.mean_mse(vi));
    }
    std::printf("full beats baseline on %d/%lld seeds\n", result.full_wins_vs_baseline,
                (long long)seeds.size());
    std::filesystem::create_directories(out_dir);
    feat::write_ablate_csv(out_dir + "/ablate.csv", result);
    std::printf("csv: %s/ablate.csv\n", out_dir.c_str());
    return 0;
}

int cmd_gradcheck(int64_t seeds) {
    auto results = feat::run_gradient_suite(seeds);
    double worst = 0;
    std::string worst_op;
    std::map<std::string, double> per_op;
    for (const auto& e : results) {
        per_op[e.op] = std::max(per_op[e.op], e.max_rel_err);
        if (e.max_rel_err > worst) {
            worst = e.max_rel_err;
            worst_op = e.op;
        }
    }
    for (const auto& [op, err] : per_op)
        std::printf("%-32s max_rel_err %.3e %s\n", op.c_str(), err, err < 1e-3 ? "ok" : "FAIL");
    std::printf("worst: %s at %.3e over %lld seeds (%zu checks)\n", worst_op.c_str(), worst,
                (long long)seeds, results.size());
    return worst < 1e-3 ? 0 : 1;
}

int cmd_count(const std::string& config_path, const std::string& preset) {
    feat::ModelConfig cfg;
    if (!preset.empty()) {
        cfg = preset_config(preset);
    } else if (!config_path.empty()) {
        cfg = feat::train_config_from(feat::KeyValueConfig::parse_file(config_path)).model;
    } else {
        throw feat::ConfigError("count: need --config or --preset");
    }
    int64_t params = feat::count_params(cfg);
    int64_t flops = feat::count_flops(cfg);
    int64_t twin = feat::count_flops_quadratic_twin(cfg);
    std::printf("config: d=%lld triplets=%lld patch=%lld clip=%lldx%lldx%lldx%lld ffn=%lldx\n",
                (long long)cfg.d, (long long)cfg.n_triplets, (long long)cfg.patch,
                (long long)cfg.frames, (long long)cfg.channels, (long long)cfg.height,
                (long long)cfg.width, (long long)cfg.ffn_mult);
    std::printf("parameters: %lld (%.1fM)\n", (long long)params, params / 1e6);
    std::printf("forward flops: %lld (%.1fG)\n", (long long)flops, flops / 1e9);
    std::printf("quadratic-attention twin flops: %lld (%.1fG, %.2fx)\n", (long long)twin,
                twin / 1e9, static_cast<double>(twin) / static_cast<double>(flops));
    std::printf("guidance parameter overhead: %.3e\n", feat::resvgm_param_overhead(cfg));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"linear-attention video diffusion at desk scale"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "out", checkpoint, preset;
    uint64_t seed = 0;

    auto* train = app.add_subcommand("train", "train a model on synthetic blob clips");
    train->add_option("--config", config_path, "key=value config file");
    train->add_option("--seed", seed, "master seed");
    train->add_option("--out-dir", out_dir, "output directory");

    auto* sample = app.add_subcommand("sample", "generate clips from a checkpoint");
    int64_t clips = 1;
    bool no_ema = false;
    sample->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    sample->add_option("--seed", seed, "sampling seed");
    sample->add_option("--out-dir", out_dir, "output directory");
    sample->add_option("--clips", clips, "number of clips");
    sample->add_flag("--no-ema", no_ema, "use live weights instead of the EMA set");

    auto* bench = app.add_subcommand("bench", "attention kernel timing ladder");
    int64_t bench_d = 16;
    int reps = 31;
    std::vector<int64_t> sizes{1024, 2048, 4096, 8192};
    bench->add_option("--d", bench_d, "channel width");
    bench->add_option("--sizes", sizes, "token counts");
    bench->add_option("--reps", reps, "repetitions per size");
    bench->add_option("--out-dir", out_dir, "output directory");

    auto* ablate = app.add_subcommand("ablate", "train the four architecture variants");
    int64_t n_seeds = 3;
    ablate->add_option("--config", config_path, "key=value config file");
    ablate->add_option("--seed", seed, "first seed");
    ablate->add_option("--seeds", n_seeds, "number of seeds");
    ablate->add_option("--out-dir", out_dir, "output directory");

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    int64_t gc_seeds = 20;
    gradcheck->add_option("--seeds", gc_seeds, "randomized shape seeds");

    auto* count = app.add_subcommand("count", "parameter and flop accounting");
    count->add_option("--config", config_path, "key=value config file");
    count->add_option("--preset", preset, "feat-s or feat-l");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) return cmd_train(config_path, seed, out_dir);
        if (sample->parsed()) return cmd_sample(checkpoint, seed, out_dir, clips, !no_ema);
        if (bench->parsed()) return cmd_bench(out_dir, bench_d, sizes, reps);
        if (ablate->parsed()) return cmd_ablate(config_path, seed, out_dir, n_seeds);
        if (gradcheck->parsed()) return cmd_gradcheck(gc_seeds);
        if (count->parsed()) return cmd_count(config_path, preset);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 1;
}
