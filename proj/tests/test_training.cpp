#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "helpers.hpp"
#include "lrnoise/errors.hpp"
#include "lrnoise/metrics.hpp"
#include "lrnoise/sensor.hpp"
#include "lrnoise/training.hpp"

using namespace lrnoise;

namespace {

std::filesystem::path temp_dir() {
    auto p = std::filesystem::temp_directory_path() / "lrnoise_test_training";
    std::filesystem::create_directories(p);
    return p;
}

// Small paired set from the oracle sensor, 16x16 patches.
PairedSet make_oracle_pairs(int count, int size, const SensorProfile& prof, uint64_t seed) {
    PairedSet set;
    RngStream rng(seed);
    for (int i = 0; i < count; ++i) {
        RawPatch clean = make_procedural_clean(size, 0, 255, 60.0, rng);
        RawPatch noisy = synthesize_physics(clean, prof, rng);
        set.names.push_back("p" + std::to_string(i));
        set.clean.push_back(std::move(clean));
        set.noisy.push_back(std::move(noisy));
        SensorProfile meta = prof;
        set.metadata.push_back(meta);
    }
    return set;
}

std::string param_bytes(std::vector<Tensor*> params) {
    std::string s;
    for (const Tensor* t : params)
        s.append(reinterpret_cast<const char*>(t->data()), sizeof(double) * t->size());
    return s;
}

SensorProfile desk_profile() {
    SensorProfile p;
    p.iso = 100;
    p.gain_k = 2.0;
    p.sigma_r = std::sqrt(2.0 * 2.0 + 1.0 + 1.0 / 12.0);
    p.oracle = OracleNoiseParams{2.0, 1.0, 1.0};
    return p;
}

}  // namespace

TEST_CASE("config round-trips; unknown keys and bad values are errors") {
    auto path = (temp_dir() / "cfg.txt").string();
    TrainConfig cfg;
    cfg.lambda1 = 0.25;
    cfg.epochs = 7;
    cfg.seed = 42;
    save_config(cfg, path);
    TrainConfig back = load_config(path);
    CHECK(back.lambda1 == 0.25);
    CHECK(back.epochs == 7);
    CHECK(back.seed == 42);
    CHECK(back.lambda2 == cfg.lambda2);

    std::ofstream(path) << "lambda1=0.1\nnot_a_key=3\n";
    CHECK_THROWS_AS(load_config(path), DataError);
    std::ofstream(path) << "epochs=abc\n";
    CHECK_THROWS_AS(load_config(path), DataError);
    std::ofstream(path) << "epochs=0\n";
    CHECK_THROWS_AS(load_config(path), ParamError);
}

TEST_CASE("cosine schedule anchors") {
    CHECK(cosine_lr(0, 100, 2e-4, 1e-6) == doctest::Approx(2e-4).epsilon(1e-12));
    CHECK(cosine_lr(100, 100, 2e-4, 1e-6) == doctest::Approx(1e-6).epsilon(1e-12));
    CHECK(cosine_lr(50, 100, 2e-4, 1e-6) == doctest::Approx(1.005e-4).epsilon(1e-12));
    // monotone nonincreasing
    double last = cosine_lr(0, 100, 2e-4, 1e-6);
    for (int t = 1; t <= 100; ++t) {
        double cur = cosine_lr(t, 100, 2e-4, 1e-6);
        CHECK(cur <= last);
        last = cur;
    }
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
    Tensor p({3}, {1.0, -2.0, 3.0});
    std::vector<Tensor*> params{&p};
    AdamState st = make_adam_state(params);
    std::vector<Tensor> grads{Tensor({3})};
    for (int i = 0; i < 5; ++i)
        adam_step(params, grads, st, 0.1, 0.5, 0.999);
    CHECK(p[0] == 1.0);
    CHECK(p[1] == -2.0);
    CHECK(p[2] == 3.0);
}

TEST_CASE("adam single-step closed form") {
    Tensor p({1}, {0.0});
    std::vector<Tensor*> params{&p};
    AdamState st = make_adam_state(params);
    std::vector<Tensor> grads{Tensor({1}, {1.0})};
    const double lr = 0.1, b1 = 0.5, b2 = 0.999, eps = 1e-8;
    adam_step(params, grads, st, lr, b1, b2, eps);
    // hand-computed bias-corrected update
    double m = (1 - b1) * 1.0, v = (1 - b2) * 1.0;
    double mhat = m / (1 - b1), vhat = v / (1 - b2);
    double expect = -lr * mhat / (std::sqrt(vhat) + eps);
    CHECK(p[0] == doctest::Approx(expect).epsilon(1e-15));
    CHECK(st.step == 1);
}

TEST_CASE("adam trajectories are deterministic") {
    auto run = [] {
        RngStream rng(11);
        Tensor p = lrnoise::testing::random_tensor({8}, rng);
        std::vector<Tensor*> params{&p};
        AdamState st = make_adam_state(params);
        for (int i = 0; i < 20; ++i) {
            std::vector<Tensor> grads{lrnoise::testing::random_tensor({8}, rng)};
            adam_step(params, grads, st, 0.01, 0.5, 0.999);
        }
        return std::vector<double>(p.data(), p.data() + p.size());
    };
    CHECK(run() == run());
}

TEST_CASE("aligned L1 loss: zero at equality, symmetric, hand oracle with identity denoiser") {
    RngStream rng(12);
    UNetParams den = make_unet(3, 4, rng);  // zero out conv => identity map

    Tensor a = lrnoise::testing::random_tensor({1, 4, 8, 8}, rng, 0.0, 1.0);
    Tensor b = lrnoise::testing::random_tensor({1, 4, 8, 8}, rng, 0.0, 1.0);

    Graph g;
    Var va = g.leaf(a), vb = g.leaf(b);
    CHECK(g.value(loss_l1_aligned(g, den, va, va)).item() == 0.0);

    double lab = g.value(loss_l1_aligned(g, den, va, vb)).item();
    double lba = g.value(loss_l1_aligned(g, den, vb, va)).item();
    CHECK(lab == doctest::Approx(lba).epsilon(1e-15));

    double oracle = 0.0;
    for (int64_t i = 0; i < a.size(); ++i) oracle += std::fabs(a[i] - b[i]);
    oracle /= static_cast<double>(a.size());
    CHECK(lab == doctest::Approx(oracle).epsilon(1e-12));
}

TEST_CASE("perceptual loss: zero at equality, nonnegative, matches the tap oracle") {
    RngStream rng(13);
    UNetParams den = make_unet(1, 2, rng);
    Tensor a = lrnoise::testing::random_tensor({1, 4, 4, 4}, rng, 0.0, 1.0);
    Tensor b = lrnoise::testing::random_tensor({1, 4, 4, 4}, rng, 0.0, 1.0);

    Graph g;
    Var va = g.leaf(a), vb = g.leaf(b);
    CHECK(g.value(loss_perceptual(g, den, va, va)).item() == 0.0);
    double lp = g.value(loss_perceptual(g, den, va, vb)).item();
    CHECK(lp >= 0.0);

    // oracle: evaluate taps directly and average their MSEs
    Graph g2;
    Binder bind(g2, false);
    std::vector<Var> ta, tb;
    unet_forward(g2, bind, den, g2.leaf(a), &ta);
    unet_forward(g2, bind, den, g2.leaf(b), &tb);
    double acc = 0.0;
    for (size_t i = 0; i < ta.size(); ++i) {
        const Tensor& x = g2.value(ta[i]);
        const Tensor& y = g2.value(tb[i]);
        double mse = 0.0;
        for (int64_t j = 0; j < x.size(); ++j) mse += (x[j] - y[j]) * (x[j] - y[j]);
        acc += mse / static_cast<double>(x.size());
    }
    acc /= static_cast<double>(ta.size());
    CHECK(lp == doctest::Approx(acc).epsilon(1e-12));
}

TEST_CASE("diff-quotient penalty: closed-form critic oracle") {
    // critic D(x) = 2*mean(x) on a single pixel: scores differ by 2*dist, so
    // the quotient is 2 and the penalty (2-1)^2 = 1
    double dist = 0.01;
    double x1 = 0.37;
    double s1 = 2.0 * x1, s2 = 2.0 * (x1 + dist);
    CHECK(diff_quotient_penalty(s1, s2, dist) == doctest::Approx(1.0).epsilon(1e-12));
    // quotient below 1 contributes nothing
    CHECK(diff_quotient_penalty(1.0, 1.005, 0.01) == 0.0);
    CHECK_THROWS_AS(diff_quotient_penalty(0.0, 0.0, 0.0), ParamError);
}

TEST_CASE("critic gap term vanishes on identical real and fake batches") {
    RngStream rng(14);
    FtdParams critic = make_ftd(16, 16, 2, 2, true, rng);
    Tensor batch = lrnoise::testing::random_tensor({2, 4, 16, 16}, rng, 0.0, 1.0);
    Graph g;
    Binder bind(g, false);
    Var b1 = g.leaf(batch), b2 = g.leaf(batch);
    Var loss = critic_loss(g, bind, critic, b1, b2, Var{}, 1e-2, 0.0);
    CHECK(g.value(loss).item() == doctest::Approx(0.0).scale(1.0).epsilon(1e-14));
}

TEST_CASE("raising every critic score lowers the generator loss accordingly") {
    RngStream rng(15);
    FtdParams critic = make_ftd(16, 16, 2, 2, true, rng);
    Tensor fake = lrnoise::testing::random_tensor({2, 4, 16, 16}, rng, 0.0, 1.0);
    auto eval = [&]() {
        Graph g;
        Binder bind(g, false);
        return g.value(generator_adv_loss(g, bind, critic, g.leaf(fake))).item();
    };
    double before = eval();
    critic.head.b[0] += 1.0;  // shifts every score up by one
    double after = eval();
    CHECK(after == doctest::Approx(before - 1.0).epsilon(1e-9));
}

TEST_CASE("total loss weighting: defaults give 1.11 on unit components") {
    Graph g;
    Var one1 = g.leaf(Tensor::scalar(1.0));
    Var one2 = g.leaf(Tensor::scalar(1.0));
    Var one3 = g.leaf(Tensor::scalar(1.0));
    CHECK(g.value(total_loss(g, one1, one2, one3, 0.1, 0.01)).item() ==
          doctest::Approx(1.11).epsilon(1e-15));
    CHECK(g.value(total_loss(g, one1, one2, one3, 0.0, 0.0)).item() == 1.0);
    Graph g2;
    Var z = g2.leaf(Tensor::scalar(0.0));
    CHECK(g2.value(total_loss(g2, z, z, z, 0.1, 0.01)).item() == 0.0);
}

TEST_CASE("synthesize_learned with zero generator and sigma 0 is shot noise only") {
    RngStream rng(16);
    UNetParams gen = make_unet(3, 4, rng);
    for (Tensor* t : unet_parameters(gen))
        for (int64_t i = 0; i < t->size(); ++i) (*t)[i] = 0.0;  // G == 0 everywhere

    RawPatch clean = make_procedural_clean(16, 0, 255, 60.0, rng);
    RngStream r1(77), r2(77);
    RawPatch learned = synthesize_learned(clean, gen, 2.0, 0.0, r1);

    RawPatch sig = clean;
    RawPatch shot = sample_shot_noise(sig, 2.0, r2);
    for (int64_t i = 0; i < learned.size(); ++i)
        CHECK(learned.data[i] == doctest::Approx(shot.data[i]).epsilon(1e-12));
}

TEST_CASE("synthesize_learned is deterministic in the stream") {
    RngStream rng(17);
    UNetParams gen = make_unet(3, 4, rng);
    RawPatch clean = make_procedural_clean(16, 0, 255, 40.0, rng);
    RngStream a(5), b(5), c(6);
    RawPatch o1 = synthesize_learned(clean, gen, 2.0, 2.0, a);
    RawPatch o2 = synthesize_learned(clean, gen, 2.0, 2.0, b);
    RawPatch o3 = synthesize_learned(clean, gen, 2.0, 2.0, c);
    CHECK(o1.data == o2.data);
    CHECK(o1.data != o3.data);
}

TEST_CASE("denoiser training on identity pairs drives held-out L1 to zero") {
    SensorProfile prof = desk_profile();
    PairedSet pairs = make_oracle_pairs(10, 16, prof, 21);
    for (size_t i = 0; i < pairs.size(); ++i) pairs.noisy[i] = pairs.clean[i];

    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 4;
    cfg.patch_size = 16;
    cfg.seed = 3;
    DenoiserTrainResult res = train_denoiser(pairs, cfg);
    REQUIRE_FALSE(res.epoch_val_l1.empty());
    CHECK(res.epoch_val_l1.back() <= 1e-9);  // identity init is already optimal
    CHECK(res.noisy_baseline_l1 == 0.0);
}

TEST_CASE("denoiser training beats the noisy-input baseline on oracle pairs") {
    SensorProfile prof = desk_profile();
    PairedSet pairs = make_oracle_pairs(16, 16, prof, 22);
    TrainConfig cfg;
    cfg.epochs = 6;
    cfg.batch_size = 4;
    cfg.patch_size = 16;
    cfg.lr_init = 1e-3;
    cfg.seed = 4;
    DenoiserTrainResult res = train_denoiser(pairs, cfg);
    REQUIRE_FALSE(res.epoch_val_l1.empty());
    CHECK(res.epoch_val_l1.back() < res.noisy_baseline_l1);
}

TEST_CASE("denoiser training is bit-deterministic under a fixed seed") {
    SensorProfile prof = desk_profile();
    PairedSet pairs = make_oracle_pairs(8, 16, prof, 23);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 4;
    cfg.patch_size = 16;
    cfg.seed = 9;
    DenoiserTrainResult r1 = train_denoiser(pairs, cfg);
    DenoiserTrainResult r2 = train_denoiser(pairs, cfg);
    CHECK(param_bytes(unet_parameters(r1.params)) == param_bytes(unet_parameters(r2.params)));
}

TEST_CASE("noise-model smoke training: runs, freezes the denoiser, finite logs") {
    SensorProfile prof = desk_profile();
    PairedSet pairs = make_oracle_pairs(12, 16, prof, 24);
    std::vector<SensorProfile> profiles{prof};

    RngStream drng(25);
    UNetParams denoiser = make_unet(3, 8, drng);
    std::string before = param_bytes(unet_parameters(denoiser));

    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 4;
    cfg.patch_size = 16;
    cfg.critic_steps_per_gen_step = 2;
    cfg.seed = 10;

    int rows = 0;
    bool all_finite = true;
    NoiseModelTrainResult res =
        train_noise_model(pairs, profiles, denoiser, cfg, [&](const EpochLogRow& row) {
            ++rows;
            all_finite &= std::isfinite(row.critic_loss) && std::isfinite(row.gen_loss);
        });
    CHECK(rows > 0);
    CHECK(all_finite);
    CHECK(param_bytes(unet_parameters(denoiser)) == before);  // frozen
    REQUIRE_FALSE(res.epoch_val_kld.empty());
    for (double v : res.epoch_val_kld) CHECK(std::isfinite(v));
    CHECK(std::isfinite(res.initial_val_kld));
}

TEST_CASE("noise-model training requires a profile for every image ISO") {
    SensorProfile prof = desk_profile();
    PairedSet pairs = make_oracle_pairs(6, 16, prof, 26);
    pairs.metadata[2].iso = 999;  // no profile for that one
    std::vector<SensorProfile> profiles{prof};
    RngStream drng(27);
    UNetParams denoiser = make_unet(3, 4, drng);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 2;
    cfg.patch_size = 16;
    CHECK_THROWS_AS(train_noise_model(pairs, profiles, denoiser, cfg), DataError);
}

TEST_CASE("noise-model training is bit-deterministic and resume replays exactly") {
    SensorProfile prof = desk_profile();
    PairedSet pairs = make_oracle_pairs(10, 16, prof, 28);
    std::vector<SensorProfile> profiles{prof};
    RngStream drng(29);
    UNetParams denoiser = make_unet(3, 4, drng);

    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 4;
    cfg.patch_size = 16;
    cfg.critic_steps_per_gen_step = 1;
    cfg.seed = 11;

    NoiseModelTrainResult full = train_noise_model(pairs, profiles, denoiser, cfg);
    NoiseModelTrainResult again = train_noise_model(pairs, profiles, denoiser, cfg);
    CHECK(param_bytes(unet_parameters(full.generator)) ==
          param_bytes(unet_parameters(again.generator)));
    CHECK(param_bytes(ftd_parameters(full.critic)) == param_bytes(ftd_parameters(again.critic)));

    // stop after epoch 0, then resume to the end; trajectories must agree
    auto state = (temp_dir() / "nm.state").string();
    NoiseModelOptions stop_opt;
    stop_opt.state_path = state;
    stop_opt.stop_after_epoch = 0;
    train_noise_model(pairs, profiles, denoiser, cfg, {}, stop_opt);

    NoiseModelOptions resume_opt;
    resume_opt.resume_from = state;
    NoiseModelTrainResult resumed =
        train_noise_model(pairs, profiles, denoiser, cfg, {}, resume_opt);
    CHECK(param_bytes(unet_parameters(resumed.generator)) ==
          param_bytes(unet_parameters(full.generator)));
    CHECK(param_bytes(ftd_parameters(resumed.critic)) ==
          param_bytes(ftd_parameters(full.critic)));
    CHECK(resumed.epoch_val_kld.back() == full.epoch_val_kld.back());
}

TEST_CASE("critic gap is definitional: mean fake score minus mean real score") {
    // With a zero generator the fake batch is exactly the shot-noise image
    // (see the synthesize_learned test above); here we pin the other half of
    // the definition: critic_loss without penalty equals the score gap.
    RngStream rng(30);
    FtdParams critic = make_ftd(16, 16, 2, 2, true, rng);
    Tensor real = lrnoise::testing::random_tensor({3, 4, 16, 16}, rng, 0.0, 1.0);
    Tensor fake = lrnoise::testing::random_tensor({3, 4, 16, 16}, rng, 0.0, 1.0);

    Graph g;
    Binder bind(g, false);
    Var loss = critic_loss(g, bind, critic, g.leaf(real), g.leaf(fake), Var{}, 1e-2, 0.0);

    Graph g2;
    Binder bind2(g2, false);
    const Tensor& sr = g2.value(ftd_forward(g2, bind2, critic, g2.leaf(real)));
    const Tensor& sf = g2.value(ftd_forward(g2, bind2, critic, g2.leaf(fake)));
    double mean_r = 0.0, mean_f = 0.0;
    for (int64_t i = 0; i < sr.size(); ++i) {
        mean_r += sr[i];
        mean_f += sf[i];
    }
    mean_r /= static_cast<double>(sr.size());
    mean_f /= static_cast<double>(sf.size());
    CHECK(g.value(loss).item() == doctest::Approx(mean_f - mean_r).epsilon(1e-12));
}
