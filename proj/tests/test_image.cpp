#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "nafrssr/image.hpp"
#include "support/gradcheck.hpp"

using namespace nafrssr;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) { return fs::temp_directory_path() / ("nafrssr_test_" + name); }

Image random_image(int w, int h, std::mt19937_64& rng) {
    Image img(w, h);
    std::uniform_int_distribution<int> d(0, 255);
    for (auto& s : img.samples) s = static_cast<std::uint8_t>(d(rng));
    return img;
}

// Keys cubic written out piecewise, evaluated in full at every source pixel.
double keys(double x) {
    x = std::fabs(x);
    if (x <= 1) return 1.5 * x * x * x - 2.5 * x * x + 1;
    if (x < 2) return -0.5 * x * x * x + 2.5 * x * x - 4 * x + 2;
    return 0;
}

// Brute-force 2-D upsample by an integer factor: weights over every source
// pixel with replicated borders folded into the edge samples.
std::vector<double> oracle_upsample(const std::vector<double>& src, int h, int w, int f) {
    std::vector<double> out(static_cast<std::size_t>(h * f) * w * f);
    for (int oy = 0; oy < h * f; ++oy)
        for (int ox = 0; ox < w * f; ++ox) {
            const double uy = (oy + 0.5) / f - 0.5, ux = (ox + 0.5) / f - 0.5;
            double acc = 0, total = 0;
            for (int j = -4; j < h + 4; ++j)
                for (int i = -4; i < w + 4; ++i) {
                    const double wt = keys(uy - j) * keys(ux - i);
                    const int cj = std::min(std::max(j, 0), h - 1), ci = std::min(std::max(i, 0), w - 1);
                    acc += wt * src[static_cast<std::size_t>(cj) * w + ci];
                    total += wt;
                }
            out[static_cast<std::size_t>(oy) * w * f + ox] = acc / total;
        }
    return out;
}

}  // namespace

TEST_SUITE("ppm") {
    TEST_CASE("single red pixel is an 11-byte header plus one RGB triple") {
        Image img(1, 1);
        img.at(0, 0, 0) = 255;
        const auto bytes = encode_ppm(img);
        const std::string want = "P6\n1 1\n255\n";
        REQUIRE(bytes.size() == 14);
        CHECK(std::string(bytes.begin(), bytes.begin() + 11) == want);
        CHECK(bytes[11] == 255);
        CHECK(bytes[12] == 0);
        CHECK(bytes[13] == 0);
        CHECK(decode_ppm(bytes) == img);
    }

    TEST_CASE("file round trip is bitwise") {
        std::mt19937_64 rng(1);
        Image img = random_image(17, 9, rng);
        const auto path = temp_path("roundtrip.ppm");
        write_ppm(img, path);
        CHECK(read_ppm(path) == img);
        fs::remove(path);
    }

    TEST_CASE("header comments and arbitrary whitespace are accepted") {
        std::string text = "P6 # comment\n2\t1\n# another\n255\n";
        std::vector<std::uint8_t> bytes(text.begin(), text.end());
        for (int i = 0; i < 6; ++i) bytes.push_back(static_cast<std::uint8_t>(i));
        Image img = decode_ppm(bytes);
        CHECK(img.width == 2);
        CHECK(img.at(1, 0, 2) == 5);
    }

    TEST_CASE("malformed inputs are rejected") {
        auto bytes_of = [](const std::string& s) { return std::vector<std::uint8_t>(s.begin(), s.end()); };
        CHECK_THROWS_WITH_AS(decode_ppm(bytes_of("P6\n1 1\n65535\n")), doctest::Contains("maxval"), std::runtime_error);
        CHECK_THROWS_WITH_AS(decode_ppm(bytes_of("P3\n1 1\n255\n")), doctest::Contains("P6"), std::runtime_error);
        CHECK_THROWS_WITH_AS(decode_ppm(bytes_of("P6\n1 x\n255\n")), doctest::Contains("height"), std::runtime_error);
        CHECK_THROWS_WITH_AS(decode_ppm(bytes_of("P6\n2 2\n255\nabc")), doctest::Contains("short data"), std::runtime_error);
        CHECK_THROWS_AS(read_ppm(temp_path("does_not_exist.ppm")), std::runtime_error);
    }
}

TEST_SUITE("conversion") {
    TEST_CASE("tensor round trip and half-up rounding") {
        std::mt19937_64 rng(2);
        Image img = random_image(5, 4, rng);
        CHECK(tensor_to_image(image_to_tensor(img)) == img);
        CHECK(quantize(0.5 / 255.0) == 1);
        CHECK(quantize(-3.0) == 0);
        CHECK(quantize(7.0) == 255);
        CHECK(quantize(254.5 / 255.0) == 255);
    }
}

TEST_SUITE("bicubic") {
    TEST_CASE("kernel values") {
        CHECK(cubic_kernel(0) == 1.0);
        CHECK(cubic_kernel(1) == 0.0);
        CHECK(cubic_kernel(2) == 0.0);
        CHECK(cubic_kernel(0.5) == doctest::Approx(0.5625));
        CHECK(cubic_kernel(1.5) == doctest::Approx(-0.0625));
    }

    TEST_CASE("taps sum to one at every phase") {
        for (Scale s : {Scale{4, 1}, Scale{1, 4}, Scale{3, 2}, Scale{2, 3}, Scale{1, 1}, Scale{7, 5}})
            for (const auto& t : resample_taps(37, s)) {
                double total = 0;
                for (double w : t.weights) total += w;
                CHECK(std::fabs(total - 1.0) < 1e-12);
            }
    }

    TEST_CASE("output lengths round up") {
        CHECK(resized_length(30, {4, 1}) == 120);
        CHECK(resized_length(120, {1, 4}) == 30);
        CHECK(resized_length(121, {1, 4}) == 31);
        CHECK_THROWS_AS(resized_length(0, {1, 4}), std::invalid_argument);
        CHECK_THROWS_AS(resized_length(4, {0, 1}), std::invalid_argument);
    }

    TEST_CASE("scale one is the identity within one ulp") {
        std::mt19937_64 rng(3);
        Tensor x = testsupport::random_tensor({2, 3, 7, 11}, rng, -3, 3);
        Tensor y = bicubic_resize(x, {1, 1});
        REQUIRE(y.shape() == x.shape());
        for (std::size_t i = 0; i < x.numel(); ++i) {
            const double a = x.data()[i], b = y.data()[i];
            CHECK(std::fabs(a - b) <= std::fabs(std::nextafter(a, b) - a));
        }
    }

    TEST_CASE("constant images stay constant at any scale") {
        for (Scale s : {Scale{4, 1}, Scale{1, 4}, Scale{5, 3}}) {
            Tensor y = bicubic_resize(Tensor::full({1, 3, 12, 20}, 0.375), s);
            for (double v : y.data()) CHECK(v == doctest::Approx(0.375).epsilon(1e-14));
        }
        Image flat(16, 8);
        for (auto& v : flat.samples) v = 77;
        CHECK(bicubic_resize(bicubic_resize(flat, {1, 4}), {4, 1}) == flat);
    }

    TEST_CASE("linear ramp is reproduced in the interior") {
        Tensor ramp({1, 1, 4, 20});
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 20; ++x) ramp.at(0, 0, y, x) = 0.1 * x + 0.25;
        Tensor up = bicubic_resize(ramp, {4, 1});
        for (int y = 0; y < 16; ++y)
            for (int x = 12; x < 68; ++x) CHECK(std::fabs(up.at(0, 0, y, x) - (0.1 * ((x + 0.5) / 4 - 0.5) + 0.25)) < 1e-6);
    }

    TEST_CASE("x4 upsample matches brute-force 2-D oracle") {
        std::mt19937_64 rng(4);
        Tensor x = testsupport::random_tensor({1, 1, 6, 9}, rng);
        Tensor up = bicubic_resize(x, {4, 1});
        auto want = oracle_upsample({x.data().begin(), x.data().end()}, 6, 9, 4);
        for (std::size_t i = 0; i < want.size(); ++i) CHECK(std::fabs(up.data()[i] - want[i]) < 1e-12);
    }

    TEST_CASE("downsample averages a 2x2 checker towards its mean") {
        Tensor x({1, 1, 16, 16});
        for (int y = 0; y < 16; ++y)
            for (int xx = 0; xx < 16; ++xx) x.at(0, 0, y, xx) = ((y + xx) % 2) ? 1.0 : 0.0;
        Tensor d = bicubic_resize(x, {1, 4});
        REQUIRE(d.shape() == Shape{1, 1, 4, 4});
        for (int y = 1; y < 3; ++y)
            for (int xx = 1; xx < 3; ++xx) CHECK(std::fabs(d.at(0, 0, y, xx) - 0.5) < 0.02);
    }
}

TEST_CASE("bicubic backward matches finite differences") {
    std::mt19937_64 rng(11);
    for (Scale sc : {Scale{4, 1}, Scale{1, 4}, Scale{3, 2}})
        for (Shape s : {Shape{1, 1, 4, 5}, Shape{2, 3, 3, 3}, Shape{1, 2, 8, 6}, Shape{1, 1, 1, 9}, Shape{1, 3, 5, 4}}) {
            auto r = testsupport::gradcheck([sc](const auto& t) { return bicubic_resize(t[0], sc); },
                                            {testsupport::random_tensor(s, rng)}, rng);
            CAPTURE(s.str());
            CHECK(r.max_rel_error < 1e-6);
        }
}

TEST_SUITE("patches") {
    StereoPair pair_of(int h, int w, std::mt19937_64& rng) {
        return {testsupport::random_tensor({1, 3, h, w}, rng), testsupport::random_tensor({1, 3, h, w}, rng)};
    }

    TEST_CASE("patch counts") {
        std::mt19937_64 rng(5);
        CHECK(patch_count(30, 90) == 1);
        CHECK(patch_count(50, 110) == 4);
        CHECK(extract_patches(pair_of(30, 90, rng), pair_of(120, 360, rng)).size() == 1);
        CHECK(extract_patches(pair_of(50, 110, rng), pair_of(200, 440, rng)).size() == 4);
        CHECK(extract_patches(pair_of(69, 129, rng), pair_of(276, 516, rng)).size() == 4);
    }

    TEST_CASE("patches are cut at matching coordinates") {
        std::mt19937_64 rng(6);
        StereoPair lr = pair_of(50, 110, rng), hr = pair_of(200, 440, rng);
        auto patches = extract_patches(lr, hr);
        const StereoPatch& p = patches[3];
        CHECK(p.y == 20);
        CHECK(p.x == 20);
        CHECK(p.lr.left.shape() == Shape{1, 3, 30, 90});
        CHECK(p.hr.right.shape() == Shape{1, 3, 120, 360});
        CHECK(p.lr.right.at(0, 2, 5, 7) == lr.right.at(0, 2, 25, 27));
        CHECK(p.hr.left.at(0, 1, 3, 4) == hr.left.at(0, 1, 83, 84));
    }

    TEST_CASE("size errors") {
        std::mt19937_64 rng(7);
        CHECK_THROWS_AS(extract_patches(pair_of(29, 90, rng), pair_of(116, 360, rng)), std::invalid_argument);
        CHECK_THROWS_AS(extract_patches(pair_of(30, 90, rng), pair_of(120, 361, rng)), std::invalid_argument);
    }

    TEST_CASE("augmentation") {
        std::mt19937_64 rng(8);
        StereoPatch p{pair_of(3, 5, rng), pair_of(12, 20, rng)};
        auto same = [](const StereoPatch& a, const StereoPatch& b) {
            auto eq = [](const Tensor& x, const Tensor& y) {
                return std::equal(x.data().begin(), x.data().end(), y.data().begin());
            };
            return eq(a.lr.left, b.lr.left) && eq(a.lr.right, b.lr.right) && eq(a.hr.left, b.hr.left) && eq(a.hr.right, b.hr.right);
        };
        CHECK(same(augment(p, false, false), p));
        CHECK(same(augment(augment(p, true, false), true, false), p));
        CHECK(same(augment(augment(p, true, true), true, true), p));
        StereoPatch h = augment(p, true, false);
        CHECK(h.lr.left.at(0, 1, 2, 0) == p.lr.right.at(0, 1, 2, 4));
        CHECK(h.hr.right.at(0, 0, 1, 19) == p.hr.left.at(0, 0, 1, 0));
        StereoPatch v = augment(p, false, true);
        CHECK(v.lr.left.at(0, 2, 0, 3) == p.lr.left.at(0, 2, 2, 3));
    }
}

TEST_CASE("manifest parsing") {
    const auto path = temp_path("manifest.txt");
    {
        std::ofstream out(path);
        out << "a/l.ppm\ta/r.ppm\n\nb l.ppm\tb r.ppm\r\n";
    }
    auto m = read_manifest(path);
    REQUIRE(m.size() == 2);
    CHECK(m[1].left == "b l.ppm");
    CHECK(m[1].right == "b r.ppm");
    {
        std::ofstream out(path);
        out << "only-one-path\n";
    }
    CHECK_THROWS_WITH_AS(read_manifest(path), doctest::Contains(":1:"), std::runtime_error);
    fs::remove(path);
}
