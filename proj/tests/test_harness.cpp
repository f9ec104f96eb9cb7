#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "feat/feat.hpp"

using namespace feat;

namespace {

SyntheticVideoSpec small_spec(uint64_t seed) {
    SyntheticVideoSpec s;
    s.frames = 6;
    s.height = 32;
    s.width = 32;
    s.channels = 1;
    s.blobs_min = 1;
    s.blobs_max = 2;
    s.radius_min = 3.0;
    s.radius_max = 5.0;
    s.speed_min = 0.5;
    s.speed_max = 1.5;
    s.seed = seed;
    return s;
}

TrainConfig tiny_train_config(const std::string& out_dir) {
    TrainConfig cfg;
    cfg.model.d = 16;
    cfg.model.n_triplets = 1;
    cfg.model.patch = 4;
    cfg.model.frames = 4;
    cfg.model.channels = 1;
    cfg.model.height = 16;
    cfg.model.width = 16;
    cfg.model.t_max = 10;
    cfg.batch = 1;
    cfg.steps = 10;
    cfg.train_clips = 4;
    cfg.val_clips = 2;
    cfg.val_pairs = 2;
    cfg.ckpt_every = 0;
    cfg.data.radius_min = 2.0;
    cfg.data.radius_max = 4.0;
    cfg.out_dir = out_dir;
    return cfg;
}

std::string temp_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir.string();
}

}  // namespace

TEST_CASE("dataset determinism and kinematics", "[harness][dataset]") {
    SECTION("same seed twice gives bit-identical clips") {
        auto a = gen_dataset(small_spec(5), 3);
        auto b = gen_dataset(small_spec(5), 3);
        REQUIRE(a.size() == b.size());
        for (size_t i = 0; i < a.size(); ++i)
            for (int64_t j = 0; j < a[i].numel(); ++j) REQUIRE(a[i][j] == b[i][j]);
        auto c = gen_dataset(small_spec(6), 3);
        double diff = 0;
        for (int64_t j = 0; j < a[0].numel(); ++j)
            diff = std::max(diff, std::fabs(static_cast<double>(a[0][j]) - c[0][j]));
        REQUIRE(diff > 0.0);
    }

    SECTION("zero velocity freezes the clip") {
        auto spec = small_spec(7);
        spec.speed_min = spec.speed_max = 0.0;
        auto clip = gen_clip(spec, 0);
        for (int64_t f = 1; f < spec.frames; ++f)
            for (int64_t i = 0; i < spec.height * spec.width; ++i)
                REQUIRE(clip[f * spec.height * spec.width + i] == clip[i]);
    }

    SECTION("pixel range stays inside [-1, 1]") {
        auto spec = small_spec(8);
        spec.blobs_min = spec.blobs_max = 3;
        auto clip = gen_clip(spec, 1);
        for (int64_t i = 0; i < clip.numel(); ++i) {
            REQUIRE(clip[i] >= -1.0f);
            REQUIRE(clip[i] <= 1.0f);
        }
    }

    SECTION("centroid displacement equals the velocity before reflection") {
        // single blob, placed so that no reflection can occur over the clip
        auto spec = small_spec(9);
        spec.blobs_min = spec.blobs_max = 1;
        spec.frames = 4;
        spec.speed_min = 1.0;
        spec.speed_max = 1.0;
        // search seeds for a clip whose blob stays well inside the frame
        for (uint64_t clip_idx = 0; clip_idx < 50; ++clip_idx) {
            auto clip = gen_clip(spec, clip_idx);
            auto [x0, y0] = frame_centroid(clip, 0);
            auto [x3, y3] = frame_centroid(clip, 3);
            double margin = 10.0;
            if (x0 < margin || x0 > 31 - margin || y0 < margin || y0 > 31 - margin) continue;
            if (x3 < margin - 4 || x3 > 31 - margin + 4) continue;
            auto [x1, y1] = frame_centroid(clip, 1);
            auto [x2, y2] = frame_centroid(clip, 2);
            double vx1 = x1 - x0, vy1 = y1 - y0;
            double vx2 = x2 - x1, vy2 = y2 - y1;
            double speed1 = std::sqrt(vx1 * vx1 + vy1 * vy1);
            REQUIRE(speed1 == Catch::Approx(1.0).margin(0.08));
            REQUIRE(vx2 == Catch::Approx(vx1).margin(0.08));
            REQUIRE(vy2 == Catch::Approx(vy1).margin(0.08));
            return;  // one well-separated clip suffices
        }
        FAIL("no interior blob found in 50 clips");
    }

    SECTION("degenerate radius rejected") {
        auto spec = small_spec(10);
        spec.radius_max = 16.0;
        REQUIRE_THROWS_AS(gen_dataset(spec, 1), ConfigError);
    }
}

TEST_CASE("key=value config parsing", "[harness][config]") {
    auto kv = KeyValueConfig::parse(
        "# comment line\n"
        "model.d = 32\n"
        "model.triplets = 2   # trailing comment\n"
        "train.lr = 5e-4\n"
        "train.flip = false\n");
    auto cfg = train_config_from(kv);
    REQUIRE(cfg.model.d == 32);
    REQUIRE(cfg.model.n_triplets == 2);
    REQUIRE(cfg.lr == Catch::Approx(5e-4));
    REQUIRE(cfg.flip == false);
    REQUIRE(cfg.model.patch == 4);  // untouched default

    REQUIRE_THROWS_AS(train_config_from(KeyValueConfig::parse("model.dd = 32\n")), ConfigError);
    REQUIRE_THROWS_AS(KeyValueConfig::parse("not a pair\n"), ConfigError);
    REQUIRE_THROWS_AS(train_config_from(KeyValueConfig::parse("model.d = abc\n")), ConfigError);
}

TEST_CASE("checkpoint round trip is bit-identical", "[harness][checkpoint]") {
    std::string dir = temp_dir("feat_test_ckpt");
    ModelConfig cfg;
    cfg.d = 16;
    cfg.n_triplets = 1;
    cfg.patch = 4;
    cfg.frames = 2;
    cfg.channels = 1;
    cfg.height = 8;
    cfg.width = 8;
    cfg.t_max = 10;
    auto model = Model<float>::init(cfg, RngStream(200));

    std::vector<float> flat;
    for (const auto& p : model.params)
        flat.insert(flat.end(), p->value.vec().begin(), p->value.vec().end());
    auto ema = EmaState::init(0.9, flat);
    for (auto& v : ema.shadow) v += 0.125f;  // distinct shadow values

    std::string path = dir + "/model.feat";
    save_checkpoint(path, model, &ema);

    auto data = load_checkpoint(path);
    REQUIRE(data.cfg.d == cfg.d);
    REQUIRE(data.cfg.use_resvgm == cfg.use_resvgm);

    auto live = model_from_checkpoint(data, false);
    auto shadow = model_from_checkpoint(data, true);
    for (size_t i = 0; i < model.params.size(); ++i) {
        for (int64_t j = 0; j < model.params[i]->value.numel(); ++j) {
            REQUIRE(live.params[i]->value[j] == model.params[i]->value[j]);
            REQUIRE(shadow.params[i]->value[j] == model.params[i]->value[j] + 0.125f);
        }
    }

    // forward agreement, bit for bit
    Tensor<float> x({2, 1, 8, 8});
    RngStream rng(201);
    rng.fill_gaussian(x);
    auto ya = model.forward(x, 3);
    auto yb = live.forward(x, 3);
    for (int64_t i = 0; i < ya->numel(); ++i) REQUIRE(ya->value[i] == yb->value[i]);

    REQUIRE(file_fingerprint(path).size() == 16);
    REQUIRE_THROWS_AS(load_checkpoint(dir + "/missing.feat"), ConfigError);
}

TEST_CASE("ten-step training is deterministic", "[harness][train]") {
    auto cfg = tiny_train_config(temp_dir("feat_test_train_a"));
    auto r1 = train(cfg);
    cfg.out_dir = temp_dir("feat_test_train_b");
    auto r2 = train(cfg);

    REQUIRE(r1.losses.size() == 10);
    REQUIRE(r2.losses.size() == 10);
    for (size_t i = 0; i < r1.losses.size(); ++i) REQUIRE(r1.losses[i] == r2.losses[i]);
    REQUIRE(r1.final_val_mse == r2.final_val_mse);
    REQUIRE(r1.init_fingerprint == r2.init_fingerprint);
    REQUIRE_FALSE(r1.aborted);

    // different seed moves the trace
    cfg.out_dir = temp_dir("feat_test_train_c");
    cfg.seed = 1;
    auto r3 = train(cfg);
    bool any_diff = false;
    for (size_t i = 0; i < r1.losses.size(); ++i) any_diff |= (r1.losses[i] != r3.losses[i]);
    REQUIRE(any_diff);
}

TEST_CASE("flip toggle leaves initialization untouched", "[harness][train]") {
    auto cfg = tiny_train_config(temp_dir("feat_test_flip_a"));
    cfg.flip = true;
    auto with_flip = train(cfg);
    cfg.out_dir = temp_dir("feat_test_flip_b");
    cfg.flip = false;
    auto without_flip = train(cfg);
    REQUIRE(with_flip.init_fingerprint == without_flip.init_fingerprint);
}

TEST_CASE("loss trace CSV is well-formed", "[harness][train]") {
    auto cfg = tiny_train_config(temp_dir("feat_test_csv"));
    auto result = train(cfg);

    std::ifstream in(result.loss_csv_path);
    REQUIRE(in.good());
    std::string header;
    std::getline(in, header);
    REQUIRE(header == "step,loss,wall_ms");
    int64_t prev_step = 0;
    double prev_wall = -1;
    std::string line;
    int rows = 0;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string step_s, loss_s, wall_s;
        REQUIRE(std::getline(ls, step_s, ','));
        REQUIRE(std::getline(ls, loss_s, ','));
        REQUIRE(std::getline(ls, wall_s, ','));
        int64_t step = std::stoll(step_s);
        double loss = std::stod(loss_s);
        double wall = std::stod(wall_s);
        REQUIRE(step == prev_step + 1);
        REQUIRE(std::isfinite(loss));
        REQUIRE(wall >= prev_wall);
        prev_step = step;
        prev_wall = wall;
        ++rows;
    }
    REQUIRE(rows == 10);
}

TEST_CASE("checkpoints written during training reload and rerun", "[harness][train]") {
    auto cfg = tiny_train_config(temp_dir("feat_test_resume"));
    cfg.steps = 6;
    cfg.ckpt_every = 3;
    auto result = train(cfg);
    REQUIRE(std::filesystem::exists(cfg.out_dir + "/ckpt_step000003.feat"));
    REQUIRE(std::filesystem::exists(cfg.out_dir + "/ckpt_step000006.feat"));
    REQUIRE(std::filesystem::exists(result.checkpoint_path));

    auto data = load_checkpoint(result.checkpoint_path);
    auto model = model_from_checkpoint(data, false);
    Tensor<float> x({4, 1, 16, 16});
    RngStream rng(202);
    rng.fill_gaussian(x);
    auto out = model.forward(x, 2);
    REQUIRE(out->value.all_finite());
}

TEST_CASE("sample writes frames and a manifest", "[harness][sample]") {
    std::string dir = temp_dir("feat_test_sample");
    auto cfg = tiny_train_config(dir);
    cfg.steps = 2;
    auto result = train(cfg);

    auto data = load_checkpoint(result.checkpoint_path);
    auto model = model_from_checkpoint(data, true);
    model.set_requires_grad(false);
    auto sched = make_schedule(cfg.model.t_max, cfg.beta_start, cfg.beta_end);
    std::function<Tensor<float>(const Tensor<float>&, int64_t)> denoiser =
        [&](const Tensor<float>& xt, int64_t t) { return model.forward(xt, t)->value; };
    RngStream rng = RngStream::derive(7, kRngSample);
    auto clip = sample<float>(denoiser, Shape{cfg.model.frames, 1, 16, 16}, sched, rng);
    REQUIRE(clip.all_finite());

    auto files = write_clip(dir, "sample000", clip, 7, file_fingerprint(result.checkpoint_path));
    REQUIRE(files.size() == static_cast<size_t>(cfg.model.frames));
    for (const auto& f : files) REQUIRE(std::filesystem::exists(dir + "/" + f));

    std::ifstream manifest(dir + "/sample000_manifest.json");
    REQUIRE(manifest.good());
    nlohmann::json j;
    manifest >> j;
    REQUIRE(j.at("frames").get<int64_t>() == cfg.model.frames);
    REQUIRE(j.at("seed").get<uint64_t>() == 7);
    REQUIRE(j.at("checkpoint_fingerprint").get<std::string>().size() == 16);

    // first frame file is a valid binary graymap
    std::ifstream pgm(dir + "/" + files[0], std::ios::binary);
    std::string magic;
    pgm >> magic;
    REQUIRE(magic == "P5");
}

TEST_CASE("ablation harness orders variants deterministically", "[harness][ablate]") {
    auto cfg = tiny_train_config(temp_dir("feat_test_ablate"));
    cfg.steps = 3;
    auto r1 = ablate(cfg, {0, 1});
    auto r2 = ablate(cfg, {0, 1});
    REQUIRE(r1.variants.size() == 4);
    REQUIRE(r1.val_mse == r2.val_mse);

    // lambda-zero full model equals the wkv_channel variant at init: same
    // non-lambda draws, so their first-step losses coincide
    TrainConfig a = cfg;
    a.model.st_attention = StAttention::Wkv;
    a.model.use_channel_block = true;
    a.model.use_resvgm = false;
    a.steps = 1;
    a.out_dir = temp_dir("feat_test_ablate_a");
    TrainConfig b = a;
    b.model.use_resvgm = true;
    b.out_dir = temp_dir("feat_test_ablate_b");
    auto ra = train(a);
    auto rb = train(b);
    REQUIRE(ra.losses[0] == rb.losses[0]);

    std::string csv_path = cfg.out_dir + "/ablate.csv";
    write_ablate_csv(csv_path, r1);
    std::ifstream in(csv_path);
    std::string header;
    std::getline(in, header);
    REQUIRE(header == "variant,seed,val_mse");
    int rows = 0;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) ++rows;
    REQUIRE(rows == 8);  // 4 variants x 2 seeds
}
