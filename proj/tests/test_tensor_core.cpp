#include <cmath>
#include <cstring>
#include <random>
#include <stdexcept>

#include "doctest.h"
#include "nafrssr/ops.hpp"
#include "nafrssr/simd.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace nafrssr;
using testsupport::random_tensor;

namespace {

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(double)) == 0;
}

Tensor vec_param(std::vector<double> v) {
    const int c = static_cast<int>(v.size());
    return Tensor(Shape{1, c, 1, 1}, std::move(v));
}

}  // namespace

TEST_SUITE("conv2d") {
    TEST_CASE("all-ones kernel counts the in-bounds neighbours") {
        Tensor x = Tensor::full({1, 1, 3, 3}, 1.0);
        Tensor w = Tensor::full({1, 1, 3, 3}, 1.0);
        Tensor y = ops::conv2d(x, w, Tensor(), {.padding = 1});
        CHECK(values(y) == std::vector<double>{4, 6, 4, 6, 9, 6, 4, 6, 4});
    }

    TEST_CASE("centre-tap kernel is the identity") {
        std::mt19937_64 rng(1);
        Tensor x = random_tensor({2, 1, 4, 5}, rng);
        Tensor w({1, 1, 3, 3});
        w.at(0, 0, 1, 1) = 1.0;
        CHECK(bitwise_equal(ops::conv2d(x, w, Tensor(), {.padding = 1}), x));
    }

    TEST_CASE("depthwise output channel depends only on its own input channel") {
        std::mt19937_64 rng(2);
        Tensor x = random_tensor({1, 4, 5, 5}, rng);
        Tensor w = random_tensor({4, 1, 3, 3}, rng);
        Tensor b = random_tensor({1, 4, 1, 1}, rng);
        Tensor y = ops::conv2d(x, w, b, {.padding = 1, .groups = 4});
        auto want = oracle::conv2d(oracle::of(x), oracle::of(w), values(b), 1, 1, 4);
        CHECK(oracle::max_rel_error(values(y), want.v) < 1e-10);

        // Perturbing channel 2 leaves every other output channel untouched.
        Tensor x2 = x.detach();
        for (int i = 0; i < 5; ++i) x2.at(0, 2, i, i) += 1.0;
        Tensor y2 = ops::conv2d(x2, w, b, {.padding = 1, .groups = 4});
        for (int c = 0; c < 4; ++c) {
            bool same = true;
            for (int i = 0; i < 5; ++i)
                for (int j = 0; j < 5; ++j) same = same && y.at(0, c, i, j) == y2.at(0, c, i, j);
            CHECK(same == (c != 2));
        }
    }

    TEST_CASE("dense, grouped and strided convolutions match the loop oracle") {
        std::mt19937_64 rng(3);
        struct Case {
            Shape x;
            int cout, k, stride, pad, groups;
        };
        for (const Case& cs : {Case{{2, 6, 7, 5}, 4, 3, 1, 1, 2}, Case{{1, 3, 9, 8}, 6, 3, 2, 1, 1},
                               Case{{1, 8, 4, 6}, 8, 1, 1, 0, 4}, Case{{1, 4, 5, 5}, 2, 5, 1, 2, 1},
                               Case{{3, 2, 6, 3}, 4, 1, 2, 0, 1}}) {
            Tensor x = random_tensor(cs.x, rng);
            Tensor w = random_tensor({cs.cout, cs.x.c / cs.groups, cs.k, cs.k}, rng);
            Tensor b = random_tensor({1, cs.cout, 1, 1}, rng);
            Tensor y = ops::conv2d(x, w, b, {cs.stride, cs.pad, cs.groups});
            auto want = oracle::conv2d(oracle::of(x), oracle::of(w), values(b), cs.stride, cs.pad, cs.groups);
            CHECK(y.shape() == want.shape);
            CHECK(oracle::max_rel_error(values(y), want.v) < 1e-10);
        }
    }

    TEST_CASE("grouped convolution equals independent convolutions on channel slices") {
        std::mt19937_64 rng(4);
        const int groups = 3;
        Tensor x = random_tensor({2, 6, 5, 7}, rng);
        Tensor w = random_tensor({9, 2, 3, 3}, rng);
        Tensor b = random_tensor({1, 9, 1, 1}, rng);
        Tensor y = ops::conv2d(x, w, b, {.padding = 1, .groups = groups});
        for (int g = 0; g < groups; ++g) {
            Tensor xg = ops::channel_slice(x, 2 * g, 2);
            Tensor wg(Shape{3, 2, 3, 3}, std::vector<double>(w.data().begin() + g * 54, w.data().begin() + (g + 1) * 54));
            Tensor bg = ops::channel_slice(b, 3 * g, 3);
            Tensor yg = ops::conv2d(xg, wg, bg, {.padding = 1});
            CHECK(bitwise_equal(ops::channel_slice(y, 3 * g, 3), yg));
        }
    }

    TEST_CASE("invalid geometry is rejected") {
        Tensor x({1, 6, 4, 4});
        CHECK_THROWS_AS(ops::conv2d(x, Tensor({4, 3, 3, 3}), Tensor(), {.padding = 1, .groups = 4}), std::invalid_argument);
        CHECK_THROWS_AS(ops::conv2d(x, Tensor({4, 5, 3, 3}), Tensor(), {.padding = 1}), std::invalid_argument);
        CHECK_THROWS_AS(ops::conv2d(x, Tensor({4, 6, 7, 7}), Tensor(), {.padding = 1}), std::invalid_argument);
        CHECK_THROWS_AS(ops::conv2d(x, Tensor({4, 6, 3, 3}), Tensor({1, 3, 1, 1}), {.padding = 1}), std::invalid_argument);
    }
}

TEST_SUITE("layer_norm") {
    TEST_CASE("constant input normalizes to zero") {
        Tensor x = Tensor::full({2, 5, 3, 4}, 3.25);
        Tensor y = ops::layer_norm(x, Tensor::full({1, 5, 1, 1}, 1.0), Tensor({1, 5, 1, 1}));
        for (double v : y.data()) CHECK(v == 0.0);
    }

    TEST_CASE("two-channel vector [1, 3] maps to [-1, 1]") {
        Tensor x(Shape{1, 2, 1, 1}, {1.0, 3.0});
        Tensor y = ops::layer_norm(x, Tensor::full({1, 2, 1, 1}, 1.0), Tensor({1, 2, 1, 1}), 1e-12);
        CHECK(y.data()[0] == doctest::Approx(-1.0).epsilon(1e-9));
        CHECK(y.data()[1] == doctest::Approx(1.0).epsilon(1e-9));
    }

    TEST_CASE("per-position statistics after normalization") {
        std::mt19937_64 rng(5);
        Tensor x = random_tensor({2, 7, 4, 3}, rng, -5.0, 5.0);
        Tensor y = ops::layer_norm(x, Tensor::full({1, 7, 1, 1}, 1.0), Tensor({1, 7, 1, 1}));
        for (int n = 0; n < 2; ++n)
            for (int h = 0; h < 4; ++h)
                for (int w = 0; w < 3; ++w) {
                    double mu = 0.0, var = 0.0;
                    for (int c = 0; c < 7; ++c) mu += y.at(n, c, h, w);
                    mu /= 7;
                    for (int c = 0; c < 7; ++c) var += (y.at(n, c, h, w) - mu) * (y.at(n, c, h, w) - mu);
                    var /= 7;
                    CHECK(std::abs(mu) < 1e-6);
                    CHECK(std::abs(var - 1.0) < 1e-4);
                }
    }

    TEST_CASE("matches the loop oracle with scale and shift") {
        std::mt19937_64 rng(6);
        Tensor x = random_tensor({2, 6, 3, 5}, rng);
        Tensor sc = random_tensor({1, 6, 1, 1}, rng), sh = random_tensor({1, 6, 1, 1}, rng);
        auto want = oracle::layer_norm(oracle::of(x), values(sc), values(sh), 1e-6);
        CHECK(oracle::max_rel_error(values(ops::layer_norm(x, sc, sh)), want.v) < 1e-10);
    }

    TEST_CASE("parameter shape is checked") {
        CHECK_THROWS_AS(ops::layer_norm(Tensor({1, 4, 2, 2}), Tensor({1, 3, 1, 1}), Tensor({1, 3, 1, 1})),
                        std::invalid_argument);
    }
}

TEST_SUITE("softmax_rows") {
    TEST_CASE("closed forms") {
        Tensor y = ops::softmax_rows(Tensor(Shape{1, 1, 2, 2}, {0.0, 0.0, 0.0, std::log(3.0)}));
        CHECK(y.data()[0] == doctest::Approx(0.5).epsilon(1e-15));
        CHECK(y.data()[1] == doctest::Approx(0.5).epsilon(1e-15));
        CHECK(y.data()[2] == doctest::Approx(0.25).epsilon(1e-12));
        CHECK(y.data()[3] == doctest::Approx(0.75).epsilon(1e-12));
    }

    TEST_CASE("shift invariance and row sums") {
        std::mt19937_64 rng(7);
        Tensor x = random_tensor({2, 3, 4, 9}, rng, -10.0, 10.0);
        Tensor shifted = x.detach();
        for (double& v : shifted.mutable_data()) v += 123.5;
        Tensor a = ops::softmax_rows(x), b = ops::softmax_rows(shifted);
        for (std::size_t i = 0; i < a.numel(); ++i) {
            CHECK(std::abs(a.data()[i] - b.data()[i]) < 1e-12);
            CHECK(a.data()[i] >= 0.0);
            CHECK(a.data()[i] <= 1.0);
        }
        for (std::size_t r = 0; r < a.numel() / 9; ++r) {
            double s = 0.0;
            for (int j = 0; j < 9; ++j) s += a.data()[r * 9 + j];
            CHECK(std::abs(s - 1.0) < 1e-6);
        }
    }

    TEST_CASE("large logits stay finite") {
        Tensor y = ops::softmax_rows(Tensor(Shape{1, 1, 1, 3}, {1000.0, 999.0, -1000.0}));
        for (double v : y.data()) CHECK(std::isfinite(v));
    }
}

TEST_SUITE("row_attention") {
    TEST_CASE("single column returns the values") {
        std::mt19937_64 rng(8);
        Tensor q1 = random_tensor({2, 3, 4, 1}, rng), q2 = random_tensor({2, 3, 4, 1}, rng), v = random_tensor({2, 3, 4, 1}, rng);
        CHECK(bitwise_equal(ops::row_attention(q1, q2, v), v));
    }

    TEST_CASE("zero queries average the row") {
        std::mt19937_64 rng(9);
        Tensor v = random_tensor({1, 2, 3, 4}, rng);
        Tensor y = ops::row_attention(Tensor({1, 2, 3, 4}), Tensor({1, 2, 3, 4}), v);
        for (int c = 0; c < 2; ++c)
            for (int h = 0; h < 3; ++h) {
                double m = 0.0;
                for (int j = 0; j < 4; ++j) m += v.at(0, c, h, j);
                m /= 4;
                for (int i = 0; i < 4; ++i) CHECK(y.at(0, c, h, i) == doctest::Approx(m).epsilon(1e-14));
            }
    }

    TEST_CASE("matches the per-position loop oracle") {
        std::mt19937_64 rng(10);
        for (Shape s : {Shape{1, 4, 2, 5}, Shape{1, 8, 6, 12}, Shape{2, 3, 1, 7}}) {
            Tensor q1 = random_tensor(s, rng), q2 = random_tensor(s, rng), v = random_tensor(s, rng);
            auto want = oracle::row_attention(oracle::of(q1), oracle::of(q2), oracle::of(v));
            CHECK(oracle::max_rel_error(values(ops::row_attention(q1, q2, v)), want.v) < 1e-10);
        }
    }

    TEST_CASE("shape mismatch is rejected") {
        CHECK_THROWS_AS(ops::row_attention(Tensor({1, 2, 3, 4}), Tensor({1, 2, 3, 5}), Tensor({1, 2, 3, 4})),
                        std::invalid_argument);
    }
}

TEST_SUITE("pixel_shuffle") {
    TEST_CASE("shape law") { CHECK(ops::pixel_shuffle(Tensor({1, 16, 5, 7}), 4).shape() == Shape{1, 1, 20, 28}); }

    TEST_CASE("index formula on one pixel") {
        Tensor y = ops::pixel_shuffle(Tensor(Shape{1, 4, 1, 1}, {1, 2, 3, 4}), 2);
        CHECK(y.shape() == Shape{1, 1, 2, 2});
        CHECK(values(y) == std::vector<double>{1, 2, 3, 4});
    }

    TEST_CASE("unshuffle inverts shuffle exactly") {
        std::mt19937_64 rng(12);
        for (int r : {1, 2, 3, 4}) {
            Tensor x = random_tensor({2, 3 * r * r, 3, 5}, rng);
            CHECK(bitwise_equal(ops::pixel_unshuffle(ops::pixel_shuffle(x, r), r), x));
        }
    }

    TEST_CASE("divisibility") { CHECK_THROWS_AS(ops::pixel_shuffle(Tensor({1, 6, 2, 2}), 2), std::invalid_argument); }
}

TEST_SUITE("global_avg_pool") {
    TEST_CASE("constant and small cases") {
        Tensor pooled = ops::global_avg_pool(Tensor::full({2, 3, 4, 5}, -1.5));
        for (double v : pooled.data()) CHECK(v == -1.5);
        CHECK(ops::global_avg_pool(Tensor(Shape{1, 1, 2, 2}, {1, 2, 3, 4})).item() == 2.5);
    }

    TEST_CASE("channel mean of the pooled map equals the global mean") {
        std::mt19937_64 rng(13);
        Tensor x = random_tensor({1, 6, 5, 4}, rng);
        Tensor p = ops::global_avg_pool(x);
        double a = 0.0, b = 0.0;
        for (double v : p.data()) a += v;
        for (double v : x.data()) b += v;
        CHECK(std::abs(a / 6 - b / 120) < 1e-12);
    }
}

TEST_SUITE("elementwise") {
    TEST_CASE("identities") {
        std::mt19937_64 rng(14);
        Tensor x = random_tensor({2, 3, 4, 5}, rng);
        CHECK(bitwise_equal(ops::add(x, Tensor(x.shape())), x));
        CHECK(bitwise_equal(ops::mul(x, Tensor::full(x.shape(), 1.0)), x));
        CHECK(bitwise_equal(ops::scale(x, 1.0), x));
    }

    TEST_CASE("channel scale by [2, 0]") {
        Tensor x = Tensor::full({2, 2, 2, 2}, 3.0);
        Tensor y = ops::mul_broadcast(x, vec_param({2.0, 0.0}));
        for (int n = 0; n < 2; ++n)
            for (int i = 0; i < 4; ++i) {
                CHECK(y.data()[x.shape().offset(n, 0, 0, 0) + i] == 6.0);
                CHECK(y.data()[x.shape().offset(n, 1, 0, 0) + i] == 0.0);
            }
        CHECK_THROWS_AS(ops::mul_broadcast(x, Tensor({1, 3, 1, 1})), std::invalid_argument);
        CHECK_THROWS_AS(ops::add(x, Tensor({2, 2, 2, 1})), std::invalid_argument);
    }

    TEST_CASE("fixed evaluation order") {
        // Integer-valued operands add exactly, so both groupings agree bitwise.
        std::mt19937_64 rng(15);
        std::uniform_int_distribution<int> dist(-1000, 1000);
        auto ints = [&](Shape s) {
            std::vector<double> v(s.numel());
            for (double& x : v) x = dist(rng);
            return Tensor(s, std::move(v));
        };
        Tensor a = ints({1, 2, 3, 4}), b = ints({1, 2, 3, 4}), c = ints({1, 2, 3, 4});
        CHECK(bitwise_equal(ops::add(ops::add(a, b), c), ops::add(a, ops::add(b, c))));
        // Arbitrary reals: the same expression is reproducible bit for bit.
        Tensor x = random_tensor({1, 2, 3, 4}, rng), y = random_tensor({1, 2, 3, 4}, rng), z = random_tensor({1, 2, 3, 4}, rng);
        CHECK(bitwise_equal(ops::add(ops::add(x, y), z), ops::add(ops::add(x, y), z)));
    }
}

TEST_SUITE("backward") {
    TEST_CASE("sum and sum of squares") {
        std::mt19937_64 rng(16);
        Tensor x = random_tensor({1, 2, 3, 3}, rng, -1, 1, true);
        ops::sum(x).backward();
        for (double g : x.grad()) CHECK(g == 1.0);
        x.zero_grad();
        ops::sum(ops::mul(x, x)).backward();
        for (std::size_t i = 0; i < x.numel(); ++i) CHECK(x.grad()[i] == 2.0 * x.data()[i]);
    }

    TEST_CASE("fan-out accumulates and unused leaves stay zero") {
        Tensor x = Tensor::full({1, 1, 2, 2}, 2.0, true);
        Tensor unused = Tensor::full({1, 1, 2, 2}, 5.0, true);
        ops::sum(ops::add(ops::scale(x, 3.0), ops::mul(x, x))).backward();
        for (double g : x.grad()) CHECK(g == 7.0);
        for (double g : unused.grad()) CHECK(g == 0.0);
    }

    TEST_CASE("error paths") {
        Tensor x = Tensor::full({1, 1, 2, 2}, 1.0, true);
        CHECK_THROWS_AS(ops::scale(x, 2.0).backward(), std::invalid_argument);
        Tensor loss = ops::sum(ops::mul(x, x));
        loss.backward();
        CHECK_THROWS_AS(loss.backward(), std::logic_error);
        CHECK_THROWS_AS(ops::sum(Tensor({1, 1, 2, 2})).backward(), std::logic_error);
    }

    TEST_CASE("no graph is recorded under NoGradGuard") {
        Tensor x = Tensor::full({1, 1, 2, 2}, 1.0, true);
        NoGradGuard guard;
        Tensor y = ops::mul(x, x);
        CHECK_FALSE(y.requires_grad());
        CHECK(y.is_leaf());
    }
}

TEST_CASE("analytic gradients match central differences for every op") {
    std::mt19937_64 rng(17);
    using Fn = std::function<Tensor(const std::vector<Tensor>&)>;
    auto check = [&](const char* name, const Fn& f, std::vector<Tensor> in) {
        auto r = testsupport::gradcheck(f, std::move(in), rng);
        CAPTURE(name);
        CAPTURE(r.worst_input);
        CHECK(r.max_rel_error < 1e-4);
    };
    const Shape shapes[] = {{1, 2, 3, 4}, {2, 4, 3, 3}, {1, 6, 2, 5}, {2, 2, 4, 2}, {1, 4, 5, 6}};
    for (const Shape& s : shapes) {
        CAPTURE(s.str());
        check("conv3x3", [](const auto& t) { return ops::conv2d(t[0], t[1], t[2], {.padding = 1}); },
              {random_tensor(s, rng), random_tensor({3, s.c, 3, 3}, rng), random_tensor({1, 3, 1, 1}, rng)});
        check("conv grouped", [](const auto& t) { return ops::conv2d(t[0], t[1], t[2], {.padding = 1, .groups = 2}); },
              {random_tensor(s, rng), random_tensor({4, s.c / 2, 3, 3}, rng), random_tensor({1, 4, 1, 1}, rng)});
        check("conv depthwise", [c = s.c](const auto& t) { return ops::conv2d(t[0], t[1], t[2], {.padding = 1, .groups = c}); },
              {random_tensor(s, rng), random_tensor({s.c, 1, 3, 3}, rng), random_tensor({1, s.c, 1, 1}, rng)});
        check("conv pointwise", [](const auto& t) { return ops::conv2d(t[0], t[1], t[2]); },
              {random_tensor(s, rng), random_tensor({5, s.c, 1, 1}, rng), random_tensor({1, 5, 1, 1}, rng)});
        check("conv strided", [](const auto& t) { return ops::conv2d(t[0], t[1], Tensor(), {.stride = 2, .padding = 1}); },
              {random_tensor(s, rng), random_tensor({2, s.c, 3, 3}, rng)});
        check("layer_norm", [](const auto& t) { return ops::layer_norm(t[0], t[1], t[2]); },
              {random_tensor(s, rng), random_tensor({1, s.c, 1, 1}, rng), random_tensor({1, s.c, 1, 1}, rng)});
        check("softmax_rows", [](const auto& t) { return ops::softmax_rows(t[0]); }, {random_tensor(s, rng, -3, 3)});
        check("row_attention", [](const auto& t) { return ops::row_attention(t[0], t[1], t[2]); },
              {random_tensor(s, rng), random_tensor(s, rng), random_tensor(s, rng)});
        check("pixel_shuffle", [](const auto& t) { return ops::pixel_shuffle(t[0], 2); },
              {random_tensor({s.n, 4 * s.c, s.h, s.w}, rng)});
        check("pixel_unshuffle", [](const auto& t) { return ops::pixel_unshuffle(t[0], 2); },
              {random_tensor({s.n, s.c, 2 * s.h, 2 * s.w}, rng)});
        check("global_avg_pool", [](const auto& t) { return ops::global_avg_pool(t[0]); }, {random_tensor(s, rng)});
        check("add/sub/mul", [](const auto& t) { return ops::mul(ops::add(t[0], t[1]), ops::sub(t[0], t[1])); },
              {random_tensor(s, rng), random_tensor(s, rng)});
        check("mul_broadcast channel", [](const auto& t) { return ops::mul_broadcast(t[0], t[1]); },
              {random_tensor(s, rng), random_tensor({1, s.c, 1, 1}, rng)});
        check("mul_broadcast per-sample", [](const auto& t) { return ops::mul_broadcast(t[0], t[1]); },
              {random_tensor(s, rng), random_tensor({s.n, s.c, 1, 1}, rng)});
        check("mul_broadcast scalar", [](const auto& t) { return ops::mul_broadcast(t[0], t[1]); },
              {random_tensor(s, rng), random_tensor({1, 1, 1, 1}, rng)});
        check("channel_slice", [c = s.c](const auto& t) { return ops::channel_slice(t[0], c / 2, c - c / 2); },
              {random_tensor(s, rng)});
        check("tile_batch", [](const auto& t) { return ops::tile_batch(t[0], 3); }, {random_tensor(s, rng)});
        check("squared_error_sum", [](const auto& t) { return ops::squared_error_sum(t[0], t[1]); },
              {random_tensor(s, rng), random_tensor(s, rng)});
        check("mean", [](const auto& t) { return ops::mean(t[0]); }, {random_tensor(s, rng)});
    }
}

TEST_CASE("tensor ops agree bitwise across kernel backends") {
    std::mt19937_64 rng(18);
    Tensor x = random_tensor({2, 8, 9, 13}, rng, -1, 1, true);
    Tensor w = random_tensor({8, 4, 3, 3}, rng, -1, 1, true);
    Tensor wp = random_tensor({6, 8, 1, 1}, rng, -1, 1, true);
    auto run = [&]() {
        x.zero_grad();
        w.zero_grad();
        wp.zero_grad();
        Tensor y = ops::conv2d(x, w, Tensor(), {.padding = 1, .groups = 2});
        Tensor a = ops::row_attention(y, x, ops::mul(x, y));
        Tensor p = ops::conv2d(a, wp, Tensor());
        Tensor loss = ops::sum(ops::mul(p, p));
        loss.backward();
        std::vector<double> out = values(p);
        for (const Tensor* t : {&x, &w, &wp}) out.insert(out.end(), t->grad().begin(), t->grad().end());
        return out;
    };
    std::vector<double> scalar_run;
    {
        simd::ScopedBackend scope(simd::Backend::Scalar);
        scalar_run = run();
    }
    std::vector<double> default_run = run();
    CAPTURE(simd::active().name);
    REQUIRE(scalar_run.size() == default_run.size());
    CHECK(std::memcmp(scalar_run.data(), default_run.data(), scalar_run.size() * sizeof(double)) == 0);
}
