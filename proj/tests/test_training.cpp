// SPDX-License-Identifier: Apache-2.0
#include "superdir/error.hpp"
#include "superdir/training.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

using namespace superdir;
using namespace superdir::nn;

namespace {

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

ModelConfig tiny_model() {
    ModelConfig mc;
    mc.generator.spatial = 8;
    mc.generator.base_channels = 2;
    mc.generator.depth = 3;
    mc.generator.transformer_dim = 16;
    mc.generator.transformer_heads = 2;
    mc.discriminator.spatial = 8;
    mc.discriminator.channels = {4, 4, 4, 4, 4};
    return mc;
}

DatasetConfig small_dataset() {
    DatasetConfig c;
    c.geometry.m = 4;
    c.geometry.pattern = ElementKind::ideal_dipole;
    c.geometry.axis = Vec3::UnitY();
    c.geometry.dipole_axis = Vec3::UnitX();
    c.grid = {30, 30, Weighting::uniform, {}};
    c.spacings = {5, 0.1, 0.5, 3};
    return c;
}

struct Prepared {
    Dataset ds;
    std::vector<Sample> test;
    NormalizedArrays train;
};

Prepared prepare() {
    Prepared p;
    p.ds = generate_dataset(small_dataset());
    const auto [tr, te] = split(p.ds.samples.size(), 0.7, 1);
    for (auto i : te) p.test.push_back(p.ds.samples[i]);
    p.train = normalized_arrays(p.ds.samples, p.ds.manifest.stats, tr);
    return p;
}

std::string config_json(const ModelConfig& mc) {
    nlohmann::ordered_json j;
    j["model"] = to_json(mc);
    return j.dump();
}

bool rel_close(double a, double b, double tol) { return std::abs(a - b) <= tol * std::abs(b); }

}  // namespace

TEST_CASE("warm-up cosine schedule") {
    const WarmupCosine s{4e-6, 1e-3, 20, 100};
    CHECK(rel_close(lr_at(0, s), 4e-6, 1e-15));
    CHECK(rel_close(lr_at(20, s), 1e-3, 1e-15));
    CHECK(rel_close(lr_at(60, s), 5.02e-4, 1e-15));
    CHECK(rel_close(lr_at(100, s), 4e-6, 1e-15));
    // both branches agree at the switch point
    const double warm_end = s.alpha_min + (s.alpha_max - s.alpha_min) * 20.0 / 20.0;
    CHECK(rel_close(lr_at(20, s), warm_end, 1e-15));
    CHECK(lr_at(19, s) < lr_at(20, s));
    CHECK(lr_at(21, s) < lr_at(20, s));
    CHECK_THROWS_AS(lr_at(101, s), InvalidArgument);
    CHECK_THROWS_AS(lr_at(0, WarmupCosine{4e-6, 1e-3, 100, 100}), InvalidArgument);

    TrainConfig tc;
    tc.epochs = 30;
    tc.schedule = WarmupCosine{4e-6, 1e-3, 6, 30};
    CHECK(tc.generator_lr(6) == lr_at(6, *tc.schedule));
    const auto back = train_config_from_json(to_json(tc));
    CHECK(to_json(back) == to_json(tc));
    CHECK_THROWS_AS(train_config_from_json(nlohmann::json{{"lr", 1}}), InvalidArgument);
    tc.epochs = 40;
    CHECK_THROWS_AS(tc.validate(100), InvalidArgument);
}

TEST_CASE("loss values") {
    const auto half = Tensor::full({4, 1}, 0.5);
    CHECK(discriminator_loss(half, half).item() == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-15));
    const double floor = discriminator_loss(Tensor::full({3, 1}, 1.0), Tensor::zeros({3, 1})).item();
    CHECK(floor == doctest::Approx(-2.0 * std::log(1.0 - kProbClamp)).epsilon(1e-12));
    CHECK(floor < 3e-7);
    const auto a = Tensor::from({3, 1}, {0.2, 0.7, 0.9}), b = Tensor::from({3, 1}, {0.4, 0.1, 0.3});
    const auto ar = Tensor::from({3, 1}, {0.9, 0.2, 0.7}), br = Tensor::from({3, 1}, {0.1, 0.3, 0.4});
    CHECK(discriminator_loss(a, b).item() == doctest::Approx(discriminator_loss(ar, br).item()).epsilon(1e-15));

    const auto coeff = Tensor::from({2, 1, 2, 1}, {0.3, 0.4, 0.5, 0.6});
    CHECK(generator_loss(Tensor::full({2, 1}, 0.5), coeff, coeff).total.item() ==
          doctest::Approx(std::log(0.5)).epsilon(1e-15));
    const auto rec = generator_loss(Tensor::full({1, 1}, 0.5), Tensor::from({1, 1, 2}, {0, 0}), Tensor::from({1, 1, 2}, {1, 0}));
    CHECK(rec.recon.item() == 1.0);
    const auto fake = Tensor::from({1, 1, 2}, {0.2, 0.1}), real = Tensor::from({1, 1, 2}, {0.5, 0.5});
    // fooling the discriminator more lowers the generator loss
    CHECK(generator_loss(Tensor::full({1, 1}, 0.6), fake, real).total.item() <
          generator_loss(Tensor::full({1, 1}, 0.3), fake, real).total.item());
    CHECK_THROWS_AS(generator_loss(half, fake, coeff), InvalidArgument);
}

TEST_CASE("metric identities") {
    const std::vector<double> t{0.5, 0.0, 1.0, 0.25, 0.75, 0.1};
    const std::vector<double> zero(t.size(), 0.0);
    CHECK(nmse_db(t, zero, 2) == 0.0);
    CHECK(nmse_db(t, t, 3) == kNmseFloorDb);
    const auto perfect = accuracy(t, t);
    CHECK(perfect.percent == 100.0);
    CHECK(perfect.percent_nonzero == 100.0);
    CHECK(perfect.zero_elements == 1);
    // one sample off by 10% in every entry
    CHECK(nmse_db({1.0, 2.0}, {1.1, 2.2}, 2) == doctest::Approx(-20.0).epsilon(1e-12));
    CHECK(accuracy({1.0, 2.0}, {1.1, 2.2}).percent == doctest::Approx(90.0).epsilon(1e-12));
    CHECK_THROWS_AS(nmse_db({0.0, 0.0}, {1.0, 1.0}, 2), InvalidArgument);
}

TEST_CASE("solver targets score a unit achieved ratio") {
    const auto p = prepare();
    std::vector<std::size_t> idx(p.test.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    const auto arr = normalized_arrays(p.test, p.ds.manifest.stats, idx);
    auto fms = dataset_field_matrices(p.ds.manifest);
    const auto rep = evaluate_predictions(arr.y, p.test, p.ds.manifest.stats, fms, p.ds.manifest.config);
    CHECK(rep.achieved_ratio == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(rep.acc.percent == 100.0);
    CHECK(rep.nmse_db == kNmseFloorDb);
    CHECK(rep.skipped == 0);

    fms[0].reset();
    std::size_t on_first = 0;
    for (const auto& s : p.test) on_first += s.spacing_index == 0;
    const auto partial = evaluate_predictions(arr.y, p.test, p.ds.manifest.stats, fms, p.ds.manifest.config);
    CHECK(partial.skipped == on_first);
    CHECK(on_first > 0);
}

TEST_CASE("one step moves both networks") {
    const auto p = prepare();
    auto models = make_models(tiny_model(), 3);
    const auto g0 = models.generator.parameters()[0].data();
    const auto d0 = models.discriminator.parameters()[0].data();
    TrainConfig tc;
    tc.batch = 2;
    tc.epochs = 1;
    tc.max_steps_per_epoch = 1;
    const auto res = train(p.train, models, tc, config_json(tiny_model()));
    CHECK(res.trace.size() == 1);
    CHECK(models.generator.parameters()[0].data() != g0);
    CHECK(models.discriminator.parameters()[0].data() != d0);
}

TEST_CASE("discriminator step descends at a tiny rate") {
    const auto p = prepare();
    auto models = make_models(tiny_model(), 4);
    const std::size_t b = 16, m = 4;
    const auto x = Tensor::from({b, m, 4}, std::vector<double>(p.train.x.begin(), p.train.x.begin() + b * m * 4));
    const auto y = Tensor::from({b, m, 2}, std::vector<double>(p.train.y.begin(), p.train.y.begin() + b * m * 2));
    Tensor fake;
    {
        NoGrad ng;
        fake = models.generator.forward(x);
    }
    auto dp = models.discriminator.parameters();
    auto loss = [&] { return discriminator_loss(models.discriminator.forward(y), models.discriminator.forward(fake)); };
    const auto l0 = loss();
    zero_grads(dp);
    l0.backward();
    AdamState st{1e-6, 0.5, 0.9, 1e-8, 0, {}, {}};
    adam_step(dp, st);
    CHECK(loss().item() <= l0.item() + 1e-12);
}

TEST_CASE("training is deterministic and checkpoints round trip") {
    const auto p = prepare();
    const auto base = std::filesystem::temp_directory_path() / "superdir_train_test";
    std::filesystem::remove_all(base);
    TrainConfig tc;
    tc.batch = 8;
    tc.epochs = 2;
    tc.max_steps_per_epoch = 4;
    tc.schedule = WarmupCosine{4e-6, 1e-3, 1, 2};
    const auto cfg = config_json(tiny_model());
    auto m1 = make_models(tiny_model(), 7);
    auto m2 = make_models(tiny_model(), 7);
    const auto r1 = train(p.train, m1, tc, cfg, (base / "a").string());
    const auto r2 = train(p.train, m2, tc, cfg, (base / "b").string());
    CHECK(r1.checkpoints.size() == 3);
    CHECK(slurp(base / "a" / "trace.csv") == slurp(base / "b" / "trace.csv"));
    CHECK(slurp(base / "a" / "final.ckpt") == slurp(base / "b" / "final.ckpt"));
    CHECK(slurp(base / "a" / "epoch_000.ckpt") == slurp(base / "b" / "epoch_000.ckpt"));

    const auto rows = read_trace_csv((base / "a" / "trace.csv").string());
    REQUIRE(rows.size() == 8);
    CHECK(format_trace_row(rows[5]) == format_trace_row(r1.trace[5]));
    CHECK(rows[0].lr == 4e-6);
    CHECK(rows[4].lr == 1e-3);
    const auto ep = summarize_trace(rows);
    REQUIRE(ep.size() == 2);
    CHECK(ep[1].g_recon == doctest::Approx((rows[4].g_recon + rows[5].g_recon + rows[6].g_recon + rows[7].g_recon) / 4));

    const auto loaded = load_models((base / "a" / "final.ckpt").string());
    const auto x = Tensor::from({3, 4, 4}, std::vector<double>(p.train.x.begin(), p.train.x.begin() + 48));
    CHECK(loaded.generator.forward(x).data() == m1.generator.forward(x).data());
    const auto e1 = evaluate(m1.generator, p.test, p.ds.manifest.stats, dataset_field_matrices(p.ds.manifest), p.ds.manifest.config);
    const auto e2 = evaluate(loaded.generator, p.test, p.ds.manifest.stats, dataset_field_matrices(p.ds.manifest), p.ds.manifest.config);
    CHECK(to_json(e1).dump() == to_json(e2).dump());
    CHECK(e1.achieved_ratio >= 0.0);
    CHECK(e1.achieved_ratio <= 1.0 + 1e-6);
    std::filesystem::remove_all(base);
}

TEST_CASE("non-finite loss aborts") {
    auto p = prepare();
    p.train.y[0] = std::numeric_limits<double>::quiet_NaN();
    auto models = make_models(tiny_model(), 1);
    TrainConfig tc;
    tc.batch = p.train.n;
    tc.epochs = 1;
    try {
        static_cast<void>(train(p.train, models, tc, config_json(tiny_model())));
        FAIL("expected abort");
    } catch (const NumericalError& e) {
        CHECK(std::string(e.what()).find("last good checkpoint: none") != std::string::npos);
    }
    tc.batch = p.train.n + 1;
    CHECK_THROWS_AS(train(p.train, models, tc, "{}"), InvalidArgument);
}

TEST_CASE("reconstruction trend over a short run") {
    const auto p = prepare();
    auto models = make_models(tiny_model(), 2);
    TrainConfig tc;
    tc.batch = 16;
    tc.epochs = 10;
    tc.alpha_g = 1e-3;
    const auto res = train(p.train, models, tc, config_json(tiny_model()));
    const auto ep = summarize_trace(res.trace);
    REQUIRE(ep.size() == 10);
    double first = 0.0, second = 0.0;
    for (std::size_t i = 0; i < 5; ++i) {
        first += ep[i].g_recon;
        second += ep[i + 5].g_recon;
    }
    CHECK(second <= first);
}
