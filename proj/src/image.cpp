#include "nafrssr/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <stdexcept>

namespace nafrssr {

Image::Image(int w, int h) : width(w), height(h), samples(static_cast<std::size_t>(w) * h * 3, 0) {
    if (w < 1 || h < 1) throw std::invalid_argument("image dimensions must be positive");
}

// ---- PPM ----

namespace {

struct HeaderReader {
    const std::vector<std::uint8_t>& bytes;
    std::size_t pos = 0;

    void skip_space_and_comments() {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(bytes[pos])) {
                ++pos;
            } else {
                break;
            }
        }
    }

    long number(const char* field) {
        skip_space_and_comments();
        long v = 0;
        std::size_t start = pos;
        while (pos < bytes.size() && std::isdigit(bytes[pos])) {
            v = v * 10 + (bytes[pos] - '0');
            if (v > 1'000'000) throw std::runtime_error(std::string("ppm: ") + field + " too large");
            ++pos;
        }
        if (pos == start) throw std::runtime_error(std::string("ppm: malformed header, expected ") + field);
        return v;
    }
};

}  // namespace

Image decode_ppm(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') throw std::runtime_error("ppm: not a P6 file");
    HeaderReader r{bytes, 2};
    const long w = r.number("width");
    const long h = r.number("height");
    const long maxval = r.number("maxval");
    if (w < 1 || h < 1) throw std::runtime_error("ppm: zero-sized image");
    if (maxval != 255) throw std::runtime_error("ppm: unsupported maxval " + std::to_string(maxval) + " (only 255)");
    if (r.pos >= bytes.size() || !std::isspace(bytes[r.pos])) throw std::runtime_error("ppm: malformed header");
    ++r.pos;
    Image img(static_cast<int>(w), static_cast<int>(h));
    if (bytes.size() - r.pos < img.samples.size())
        throw std::runtime_error("ppm: short data, expected " + std::to_string(img.samples.size()) + " bytes, found " +
                                 std::to_string(bytes.size() - r.pos));
    std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(r.pos), img.samples.size(), img.samples.begin());
    return img;
}

std::vector<std::uint8_t> encode_ppm(const Image& image) {
    const std::string header = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), image.samples.begin(), image.samples.end());
    return out;
}

Image read_ppm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return decode_ppm(bytes);
    } catch (const std::runtime_error& e) {
        throw std::runtime_error(path.string() + ": " + e.what());
    }
}

void write_ppm(const Image& image, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    const auto bytes = encode_ppm(image);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

// ---- conversion ----

Tensor image_to_tensor(const Image& image) {
    Tensor t(Shape{1, 3, image.height, image.width});
    auto d = t.mutable_data();
    const std::size_t plane = static_cast<std::size_t>(image.width) * image.height;
    for (std::size_t p = 0; p < plane; ++p)
        for (int ch = 0; ch < 3; ++ch) d[ch * plane + p] = image.samples[p * 3 + ch] / 255.0;
    return t;
}

std::uint8_t quantize(double v) {
    const double s = std::floor(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5);
    return static_cast<std::uint8_t>(std::min(s, 255.0));
}

Image tensor_to_image(const Tensor& t, int n) {
    const Shape s = t.shape();
    if (s.c != 3) throw std::invalid_argument("tensor_to_image: expected 3 channels, got " + std::to_string(s.c));
    if (n < 0 || n >= s.n) throw std::invalid_argument("tensor_to_image: batch index out of range");
    Image img(s.w, s.h);
    for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x)
            for (int ch = 0; ch < 3; ++ch) img.at(x, y, ch) = quantize(t.at(n, ch, y, x));
    return img;
}

// ---- bicubic ----

double cubic_kernel(double x) {
    constexpr double a = -0.5;
    const double ax = std::abs(x);
    if (ax <= 1.0) return ((a + 2.0) * ax - (a + 3.0)) * ax * ax + 1.0;
    if (ax < 2.0) return ((a * ax - 5.0 * a) * ax + 8.0 * a) * ax - 4.0 * a;
    return 0.0;
}

int resized_length(int in, Scale s) {
    if (s.num < 1 || s.den < 1) throw std::invalid_argument("resize: scale must be positive");
    const long long num = static_cast<long long>(in) * s.num;
    const long long out = (num + s.den - 1) / s.den;
    if (in < 1 || out < 1) throw std::invalid_argument("resize: degenerate output size");
    return static_cast<int>(out);
}

std::vector<ResampleTaps> resample_taps(int in, Scale s) {
    const int out = resized_length(in, s);
    const double ratio = static_cast<double>(s.den) / s.num;  // input pixels per output pixel
    const bool shrink = s.den > s.num;
    const double stretch = shrink ? 1.0 / ratio : 1.0;
    const double width = shrink ? 4.0 * ratio : 4.0;
    const int taps = static_cast<int>(std::ceil(width)) + 2;
    std::vector<ResampleTaps> result(static_cast<std::size_t>(out));
    for (int x = 0; x < out; ++x) {
        const double u = (x + 0.5) * ratio - 0.5;
        ResampleTaps& t = result[static_cast<std::size_t>(x)];
        t.first = static_cast<int>(std::floor(u - width / 2.0));
        t.weights.resize(static_cast<std::size_t>(taps));
        double total = 0.0;
        for (int k = 0; k < taps; ++k) {
            const double w = stretch * cubic_kernel(stretch * (u - (t.first + k)));
            t.weights[static_cast<std::size_t>(k)] = w;
            total += w;
        }
        for (double& w : t.weights) w /= total;
    }
    return result;
}

namespace {

// Resamples `count` lines of length `in` with element stride `step` between
// samples and `line_step` between lines.
void resample_lines(const double* src, double* dst, int count, int in, std::ptrdiff_t step, std::ptrdiff_t line_step,
                    std::ptrdiff_t out_step, std::ptrdiff_t out_line_step, const std::vector<ResampleTaps>& taps) {
    for (int line = 0; line < count; ++line) {
        const double* s = src + line * line_step;
        double* d = dst + line * out_line_step;
        for (std::size_t x = 0; x < taps.size(); ++x) {
            const ResampleTaps& t = taps[x];
            double acc = 0.0;
            for (std::size_t k = 0; k < t.weights.size(); ++k) {
                const int j = std::clamp(t.first + static_cast<int>(k), 0, in - 1);
                acc += t.weights[k] * s[j * step];
            }
            d[static_cast<std::ptrdiff_t>(x) * out_step] = acc;
        }
    }
}

// Adjoint of resample_lines: scatters output gradients back onto the taps.
void resample_lines_adjoint(const double* gdst, double* gsrc, int count, int in, std::ptrdiff_t step,
                            std::ptrdiff_t line_step, std::ptrdiff_t out_step, std::ptrdiff_t out_line_step,
                            const std::vector<ResampleTaps>& taps) {
    for (int line = 0; line < count; ++line) {
        double* s = gsrc + line * line_step;
        const double* d = gdst + line * out_line_step;
        for (std::size_t x = 0; x < taps.size(); ++x) {
            const ResampleTaps& t = taps[x];
            const double g = d[static_cast<std::ptrdiff_t>(x) * out_step];
            for (std::size_t k = 0; k < t.weights.size(); ++k) {
                const int j = std::clamp(t.first + static_cast<int>(k), 0, in - 1);
                s[j * step] += t.weights[k] * g;
            }
        }
    }
}

}  // namespace

Tensor bicubic_resize(const Tensor& x, Scale s) {
    const Shape in = x.shape();
    auto htaps = resample_taps(in.w, s);
    auto vtaps = resample_taps(in.h, s);
    const int ow = static_cast<int>(htaps.size()), oh = static_cast<int>(vtaps.size());
    const Shape os{in.n, in.c, oh, ow};
    std::vector<double> out(os.numel());
    std::vector<double> mid(static_cast<std::size_t>(in.h) * ow);
    auto src = x.data();
    for (int p = 0; p < in.n * in.c; ++p) {
        const double* plane = src.data() + static_cast<std::size_t>(p) * in.plane();
        resample_lines(plane, mid.data(), in.h, in.w, 1, in.w, 1, ow, htaps);
        double* o = out.data() + static_cast<std::size_t>(p) * os.plane();
        resample_lines(mid.data(), o, ow, in.h, ow, 1, ow, 1, vtaps);
    }
    return detail::make_result(os, std::move(out), {x}, "bicubic_resize",
                               [in, os, htaps = std::move(htaps), vtaps = std::move(vtaps)](detail::Node& self) {
                                   double* gx = self.input_grad(0);
                                   if (!gx) return;
                                   const int ow = os.w;
                                   std::vector<double> gmid(static_cast<std::size_t>(in.h) * ow);
                                   for (int p = 0; p < in.n * in.c; ++p) {
                                       std::fill(gmid.begin(), gmid.end(), 0.0);
                                       const double* go = self.grad.data() + static_cast<std::size_t>(p) * os.plane();
                                       resample_lines_adjoint(go, gmid.data(), ow, in.h, ow, 1, ow, 1, vtaps);
                                       double* g = gx + static_cast<std::size_t>(p) * in.plane();
                                       resample_lines_adjoint(gmid.data(), g, in.h, in.w, 1, in.w, 1, ow, htaps);
                                   }
                               });
}

Image bicubic_resize(const Image& image, Scale s) {
    return tensor_to_image(bicubic_resize(image_to_tensor(image), s));
}

// ---- patches ----

int patch_count(int h, int w, const PatchGeometry& g) {
    if (h < g.height || w < g.width) return 0;
    return ((h - g.height) / g.stride + 1) * ((w - g.width) / g.stride + 1);
}

namespace {

Tensor crop(const Tensor& x, int y0, int x0, int h, int w) {
    const Shape s = x.shape();
    Tensor out(Shape{s.n, s.c, h, w});
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx) out.at(n, c, y, xx) = x.at(n, c, y0 + y, x0 + xx);
    return out;
}

}  // namespace

std::vector<StereoPatch> extract_patches(const StereoPair& lr, const StereoPair& hr, const PatchGeometry& g) {
    const Shape l = lr.left.shape();
    if (lr.right.shape() != l) throw std::invalid_argument("extract_patches: LR views differ in shape");
    if (hr.left.shape() != hr.right.shape()) throw std::invalid_argument("extract_patches: HR views differ in shape");
    const Shape h = hr.left.shape();
    if (h.h != l.h * g.upscale || h.w != l.w * g.upscale || h.c != l.c || h.n != l.n)
        throw std::invalid_argument("extract_patches: HR " + h.str() + " is not " + std::to_string(g.upscale) + "x LR " + l.str());
    if (l.h < g.height || l.w < g.width)
        throw std::invalid_argument("extract_patches: image " + std::to_string(l.h) + "x" + std::to_string(l.w) +
                                    " smaller than patch " + std::to_string(g.height) + "x" + std::to_string(g.width));
    std::vector<StereoPatch> out;
    for (int y = 0; y + g.height <= l.h; y += g.stride)
        for (int x = 0; x + g.width <= l.w; x += g.stride) {
            StereoPatch p;
            p.y = y;
            p.x = x;
            p.lr = {crop(lr.left, y, x, g.height, g.width), crop(lr.right, y, x, g.height, g.width)};
            const int u = g.upscale;
            p.hr = {crop(hr.left, y * u, x * u, g.height * u, g.width * u), crop(hr.right, y * u, x * u, g.height * u, g.width * u)};
            out.push_back(std::move(p));
        }
    return out;
}

Tensor flip_horizontal(const Tensor& x) {
    const Shape s = x.shape();
    Tensor out(s);
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int y = 0; y < s.h; ++y)
                for (int xx = 0; xx < s.w; ++xx) out.at(n, c, y, xx) = x.at(n, c, y, s.w - 1 - xx);
    return out;
}

Tensor flip_vertical(const Tensor& x) {
    const Shape s = x.shape();
    Tensor out(s);
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int y = 0; y < s.h; ++y)
                for (int xx = 0; xx < s.w; ++xx) out.at(n, c, y, xx) = x.at(n, c, s.h - 1 - y, xx);
    return out;
}

StereoPatch augment(const StereoPatch& p, bool flip_h, bool flip_v) {
    StereoPatch out = p;
    auto apply = [&](StereoPair& pair) {
        if (flip_v) pair = {flip_vertical(pair.left), flip_vertical(pair.right)};
        if (flip_h) pair = {flip_horizontal(pair.right), flip_horizontal(pair.left)};
    };
    apply(out.lr);
    apply(out.hr);
    return out;
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open manifest " + path.string());
    std::vector<ManifestEntry> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos || tab == 0 || tab + 1 == line.size() || line.find('\t', tab + 1) != std::string::npos)
            throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected 'left<TAB>right'");
        out.push_back({line.substr(0, tab), line.substr(tab + 1)});
    }
    return out;
}

}  // namespace nafrssr
