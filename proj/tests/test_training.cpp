#include <cmath>
#include <filesystem>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

#include "doctest.h"
#include "nafrssr/ops.hpp"
#include "nafrssr/training.hpp"
#include "support/gradcheck.hpp"

using namespace nafrssr;
using testsupport::random_tensor;
namespace fs = std::filesystem;

namespace {

std::vector<StereoPatch> small_patches(int count, std::mt19937_64& rng, int h = 4, int w = 6) {
    std::vector<StereoPatch> out;
    for (int i = 0; i < count; ++i) {
        StereoPatch p;
        p.lr = {random_tensor({1, 3, h, w}, rng, 0, 1), random_tensor({1, 3, h, w}, rng, 0, 1)};
        p.hr = {bicubic_resize(p.lr.left, {4, 1}), bicubic_resize(p.lr.right, {4, 1})};
        // Detail the bicubic path cannot produce.
        for (Tensor* t : {&p.hr.left, &p.hr.right})
            for (double& v : t->mutable_data()) v += 0.05 * std::sin(v * 40.0);
        out.push_back(std::move(p));
    }
    return out;
}

std::vector<std::vector<double>> snapshot(const Model& m) {
    std::vector<std::vector<double>> out;
    for (const auto& e : m.parameters().entries()) out.emplace_back(e.tensor.data().begin(), e.tensor.data().end());
    return out;
}

}  // namespace

TEST_SUITE("mse_loss") {
    TEST_CASE("fixtures") {
        std::mt19937_64 rng(1);
        Tensor a = random_tensor({2, 3, 4, 5}, rng), b = random_tensor({2, 3, 4, 5}, rng);
        CHECK(mse_loss({a, b}, {a, b}).item() == 0.0);
        Tensor a2 = Tensor::full({1, 3, 2, 2}, 0.25), b2 = Tensor::full({1, 3, 2, 2}, 0.75);
        CHECK(mse_loss({a2, b2}, {b2, a2}).item() == doctest::Approx(0.25).epsilon(1e-15));
        CHECK_THROWS_AS(mse_loss({a, b}, {a2, b2}), std::invalid_argument);
    }

    TEST_CASE("gradient is 2 (sr - hr) / count") {
        std::mt19937_64 rng(2);
        Tensor sl = random_tensor({1, 2, 3, 4}, rng, -1, 1, true), sr = random_tensor({1, 2, 3, 4}, rng, -1, 1, true);
        Tensor hl = random_tensor({1, 2, 3, 4}, rng), hr = random_tensor({1, 2, 3, 4}, rng);
        mse_loss({sl, sr}, {hl, hr}).backward();
        for (std::size_t i = 0; i < sl.numel(); ++i) {
            CHECK(std::fabs(sl.grad()[i] - 2 * (sl.data()[i] - hl.data()[i]) / 48.0) < 1e-15);
            CHECK(std::fabs(sr.grad()[i] - 2 * (sr.data()[i] - hr.data()[i]) / 48.0) < 1e-15);
        }
        for (Shape s : {Shape{1, 1, 2, 2}, Shape{2, 3, 3, 1}, Shape{1, 2, 5, 5}, Shape{3, 1, 1, 4}, Shape{1, 3, 2, 6}}) {
            Tensor tl = random_tensor(s, rng), tr = random_tensor(s, rng);
            auto r = testsupport::gradcheck([&](const auto& t) { return mse_loss({t[0], t[1]}, {tl, tr}); },
                                            {random_tensor(s, rng), random_tensor(s, rng)}, rng);
            CHECK(r.max_rel_error < 1e-6);
        }
    }
}

TEST_SUITE("schedule") {
    TEST_CASE("endpoints and midpoint") {
        CosineSchedule s;
        CHECK(s.lr_at(0) == 3e-3);
        CHECK(s.lr_at(s.total_steps) == 1e-7);
        CHECK(std::fabs(s.lr_at(s.total_steps / 2) - (3e-3 + 1e-7) / 2) < 1e-15);
        CHECK_THROWS_AS(s.lr_at(-1), std::out_of_range);
        CHECK_THROWS_AS(s.lr_at(s.total_steps + 1), std::out_of_range);
    }

    TEST_CASE("monotone and bounded") {
        CosineSchedule s{3e-3, 1e-7, 2000};
        double previous = s.lr_at(0);
        for (int t = 1; t <= 2000; ++t) {
            const double lr = s.lr_at(t);
            CHECK(lr <= previous);
            CHECK(lr >= 1e-7);
            CHECK(lr <= 3e-3);
            previous = lr;
        }
    }
}

TEST_SUITE("adamw") {
    TEST_CASE("zero gradient leaves parameters unchanged") {
        ParameterStore store;
        ParamBuilder pb(store, 3);
        pb.conv_weight("w", 4, 3, 3, 3);
        const auto before = std::vector<double>(store.entries()[0].tensor.data().begin(), store.entries()[0].tensor.data().end());
        AdamW opt(store);
        store.zero_grad();
        for (int i = 0; i < 5; ++i) opt.step(1e-2);
        CHECK(std::equal(before.begin(), before.end(), store.entries()[0].tensor.data().begin()));
    }

    TEST_CASE("first step moves each weight by lr against the gradient sign") {
        std::mt19937_64 rng(4);
        ParameterStore store;
        store.add("p", {10}, std::vector<double>(10, 0.5));
        Tensor& p = store.entries()[0].tensor;
        Tensor target = random_tensor({1, 10, 1, 1}, rng, -3, 3);
        ops::squared_error_sum(p, target).backward();
        AdamW opt(store);
        opt.step(1e-3);
        for (std::size_t i = 0; i < 10; ++i) {
            const double g = 2 * (0.5 - target.data()[i]);
            CHECK(std::fabs((p.data()[i] - 0.5) - (-1e-3 * (g > 0 ? 1 : -1))) <= 1e-3 * 1e-6);
        }
    }

    TEST_CASE("two steps match a hand-rolled update") {
        ParameterStore store;
        store.add("p", {3}, {0.1, -0.2, 0.3});
        AdamW opt(store, {0.9, 0.9, 1e-8, 0.0});
        const double g1[3] = {0.4, -1.5, 2e-3}, g2[3] = {-0.7, 0.2, 0.0};
        double p[3] = {0.1, -0.2, 0.3}, m[3] = {}, v[3] = {};
        for (int t = 1; t <= 2; ++t) {
            const double* g = t == 1 ? g1 : g2;
            const double lr = t == 1 ? 1e-2 : 5e-3;
            Tensor& param = store.entries()[0].tensor;
            param.zero_grad();
            Tensor w(Shape{1, 3, 1, 1}, {g[0], g[1], g[2]});
            ops::sum(ops::mul(param, w)).backward();
            opt.step(lr);
            for (int i = 0; i < 3; ++i) {
                m[i] = 0.9 * m[i] + 0.1 * g[i];
                v[i] = 0.9 * v[i] + 0.1 * g[i] * g[i];
                const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.9, t));
                p[i] -= lr * mh / (std::sqrt(vh) + 1e-8);
            }
            for (int i = 0; i < 3; ++i) CHECK(std::fabs(param.data()[i] - p[i]) < 1e-12);
        }
        CHECK(opt.steps_taken() == 2);
    }

    TEST_CASE("decoupled weight decay") {
        ParameterStore store;
        store.add("p", {1}, {2.0});
        AdamW opt(store, {0.9, 0.9, 1e-8, 0.1});
        store.zero_grad();
        opt.step(0.5);
        CHECK(store.entries()[0].tensor.data()[0] == doctest::Approx(2.0 - 0.5 * 0.1 * 2.0));
    }

    TEST_CASE("state sidecar round trip") {
        std::mt19937_64 rng(5);
        Model m = Model::build(preset("tiny"), 1);
        auto patches = small_patches(2, rng);
        AdamW opt(m.parameters());
        TrainOptions o;
        o.steps = 3;
        o.batch_size = 2;
        train(m, patches, o, &opt);
        const auto path = fs::temp_directory_path() / "nafrssr_optim.nfrw";
        opt.save_state(path);
        AdamW other(m.parameters());
        other.load_state(path);
        CHECK(other.steps_taken() == 3);
        const auto a = opt.export_state(), b = other.export_state();
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].values == b[i].values);
        CHECK(a.front().name.rfind("m/", 0) == 0);
        CHECK(a.back().name == "t");

        Model different = Model::build(preset("T-edge"), 0);
        AdamW wrong(different.parameters());
        CHECK_THROWS_AS(wrong.load_state(path), WeightFileError);
        fs::remove(path);
    }
}

TEST_SUITE("train") {
    TEST_CASE("zero steps leaves the model unchanged") {
        std::mt19937_64 rng(6);
        Model m = Model::build(preset("tiny"), 2);
        const auto before = snapshot(m);
        TrainOptions o;
        CHECK(train(m, small_patches(1, rng), o).trace.empty());
        CHECK(snapshot(m) == before);
    }

    TEST_CASE("equal seeds give bitwise-identical weights") {
        std::mt19937_64 rng(7);
        auto patches = small_patches(5, rng);
        TrainOptions o;
        o.steps = 6;
        o.batch_size = 2;
        o.seed = 42;
        Model a = Model::build(preset("tiny"), 3), b = Model::build(preset("tiny"), 3);
        auto ta = train(a, patches, o), tb = train(b, patches, o);
        CHECK(snapshot(a) == snapshot(b));
        for (std::size_t i = 0; i < ta.trace.size(); ++i) CHECK(ta.trace[i].loss == tb.trace[i].loss);
        Model c = Model::build(preset("tiny"), 3);
        o.seed = 43;
        train(c, patches, o);
        CHECK(snapshot(c) != snapshot(a));
    }

    TEST_CASE("trace records the schedule and decreasing loss") {
        std::mt19937_64 rng(8);
        auto patches = small_patches(1, rng);
        Model m = Model::build(preset("tiny"), 4);
        TrainOptions o;
        o.steps = 60;
        o.augment = false;
        int callbacks = 0;
        o.on_step = [&](const LossRecord&) { ++callbacks; };
        auto r = train(m, patches, o);
        REQUIRE(r.trace.size() == 60);
        CHECK(callbacks == 60);
        CHECK(r.trace[0].lr == 3e-3);
        CHECK(r.trace[30].lr == doctest::Approx((3e-3 + 1e-7) / 2));
        CHECK(r.trace.back().loss < r.trace.front().loss);
        std::ostringstream csv;
        write_loss_csv(r.trace, csv);
        CHECK(csv.str().rfind("step,lr,loss\n0,0.003,", 0) == 0);
    }

    TEST_CASE("errors") {
        std::mt19937_64 rng(9);
        Model m = Model::build(preset("tiny"), 5);
        TrainOptions o;
        o.steps = 2;
        CHECK_THROWS_AS(train(m, {}, o), std::invalid_argument);
        auto patches = small_patches(1, rng);
        m.parameters().entries()[0].tensor.mutable_data()[0] = std::numeric_limits<double>::quiet_NaN();
        try {
            train(m, patches, o);
            FAIL("expected divergence");
        } catch (const TrainingDiverged& e) {
            CHECK(e.step == 0);
            CHECK(std::string(e.what()).find("step 0") != std::string::npos);
        }
    }
}
