#include "nafrssr/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <stdexcept>

#include "nafrssr/model.hpp"

namespace nafrssr {

namespace {

void check_same_size(const char* what, const Image& a, const Image& b) {
    if (a.width != b.width || a.height != b.height)
        throw std::invalid_argument(std::string(what) + ": image sizes differ (" + std::to_string(a.width) + "x" +
                                    std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" + std::to_string(b.height) + ")");
}

std::vector<double> gaussian_window(int size, double sigma) {
    std::vector<double> g(static_cast<std::size_t>(size));
    const double centre = (size - 1) / 2.0;
    double total = 0;
    for (int i = 0; i < size; ++i) {
        const double d = i - centre;
        g[static_cast<std::size_t>(i)] = std::exp(-(d * d) / (2 * sigma * sigma));
        total += g[static_cast<std::size_t>(i)];
    }
    for (double& v : g) v /= total;
    return g;
}

// Separable "valid" filtering of one plane: rows first, then columns.
std::vector<double> filter_valid(const std::vector<double>& plane, int w, int h, const std::vector<double>& g) {
    const int k = static_cast<int>(g.size());
    const int ow = w - k + 1, oh = h - k + 1;
    std::vector<double> rows(static_cast<std::size_t>(h) * ow);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0;
            for (int i = 0; i < k; ++i) acc += g[static_cast<std::size_t>(i)] * plane[static_cast<std::size_t>(y) * w + x + i];
            rows[static_cast<std::size_t>(y) * ow + x] = acc;
        }
    std::vector<double> out(static_cast<std::size_t>(oh) * ow);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0;
            for (int i = 0; i < k; ++i) acc += g[static_cast<std::size_t>(i)] * rows[static_cast<std::size_t>(y + i) * ow + x];
            out[static_cast<std::size_t>(y) * ow + x] = acc;
        }
    return out;
}

}  // namespace

double psnr(const Image& a, const Image& b) {
    check_same_size("psnr", a, b);
    double sse = 0;
    for (std::size_t i = 0; i < a.samples.size(); ++i) {
        const double d = static_cast<double>(a.samples[i]) - b.samples[i];
        sse += d * d;
    }
    if (sse == 0) return std::numeric_limits<double>::infinity();
    const double mse = sse / static_cast<double>(a.samples.size());
    return 10.0 * std::log10(255.0 * 255.0 / mse);
}

double ssim(const Image& a, const Image& b, const SsimOptions& opt) {
    check_same_size("ssim", a, b);
    if (a.width < opt.window || a.height < opt.window)
        throw std::invalid_argument("ssim: image " + std::to_string(a.width) + "x" + std::to_string(a.height) +
                                    " smaller than the " + std::to_string(opt.window) + "x" + std::to_string(opt.window) + " window");
    const double c1 = (opt.k1 * 255) * (opt.k1 * 255), c2 = (opt.k2 * 255) * (opt.k2 * 255);
    const auto g = gaussian_window(opt.window, opt.sigma);
    const std::size_t plane = static_cast<std::size_t>(a.width) * a.height;
    double total = 0;
    for (int ch = 0; ch < 3; ++ch) {
        std::vector<double> pa(plane), pb(plane), aa(plane), bb(plane), ab(plane);
        for (std::size_t i = 0; i < plane; ++i) {
            pa[i] = a.samples[i * 3 + ch];
            pb[i] = b.samples[i * 3 + ch];
            aa[i] = pa[i] * pa[i];
            bb[i] = pb[i] * pb[i];
            ab[i] = pa[i] * pb[i];
        }
        const auto mu_a = filter_valid(pa, a.width, a.height, g), mu_b = filter_valid(pb, a.width, a.height, g);
        const auto e_aa = filter_valid(aa, a.width, a.height, g), e_bb = filter_valid(bb, a.width, a.height, g);
        const auto e_ab = filter_valid(ab, a.width, a.height, g);
        double sum = 0;
        for (std::size_t i = 0; i < mu_a.size(); ++i) {
            const double ma = mu_a[i], mb = mu_b[i];
            const double va = e_aa[i] - ma * ma, vb = e_bb[i] - mb * mb, cov = e_ab[i] - ma * mb;
            sum += ((2 * (ma * mb) + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        total += sum / static_cast<double>(mu_a.size());
    }
    return total / 3;
}

ImageScores score_pair(std::string id, const Image& sr_left, const Image& sr_right, const Image& hr_left, const Image& hr_right) {
    ImageScores s;
    s.id = std::move(id);
    s.psnr_left = psnr(sr_left, hr_left);
    s.ssim_left = ssim(sr_left, hr_left);
    s.psnr_right = psnr(sr_right, hr_right);
    s.ssim_right = ssim(sr_right, hr_right);
    return s;
}

EvalReport summarize(std::vector<ImageScores> images) {
    EvalReport r;
    r.images = std::move(images);
    if (r.images.empty()) return r;
    for (const auto& s : r.images) {
        r.mean_psnr_left += s.psnr_left;
        r.mean_ssim_left += s.ssim_left;
        r.mean_psnr_right += s.psnr_right;
        r.mean_ssim_right += s.ssim_right;
        r.mean_psnr_stereo += s.psnr_stereo();
        r.mean_ssim_stereo += s.ssim_stereo();
    }
    const double n = static_cast<double>(r.images.size());
    for (double* v : {&r.mean_psnr_left, &r.mean_ssim_left, &r.mean_psnr_right, &r.mean_ssim_right, &r.mean_psnr_stereo,
                      &r.mean_ssim_stereo})
        *v /= n;
    return r;
}

EvalReport evaluate_dataset(const Model& model, const std::filesystem::path& manifest, const std::filesystem::path& hr_dir) {
    const auto entries = read_manifest(manifest);
    if (entries.empty()) throw std::runtime_error("manifest " + manifest.string() + " lists no images");
    NoGradGuard guard;
    std::vector<ImageScores> scores;
    for (const auto& e : entries) {
        const Image hl = read_ppm(hr_dir / e.left), hr = read_ppm(hr_dir / e.right);
        if (hl.width != hr.width || hl.height != hr.height)
            throw std::runtime_error(e.left + " and " + e.right + " differ in size");
        if (hl.width % 4 != 0 || hl.height % 4 != 0)
            throw std::runtime_error(e.left + ": " + std::to_string(hl.width) + "x" + std::to_string(hl.height) +
                                     " is not divisible by 4");
        const Image ll = bicubic_resize(hl, {1, 4}), lr = bicubic_resize(hr, {1, 4});
        const StereoPair sr = model.forward({image_to_tensor(ll), image_to_tensor(lr)});
        scores.push_back(score_pair(e.left, tensor_to_image(sr.left), tensor_to_image(sr.right), hl, hr));
    }
    return summarize(std::move(scores));
}

std::string format_metric(double v, int precision) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", precision, v);
    return buf;
}

namespace {

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char ch : s) q += ch == '"' ? std::string("\"\"") : std::string(1, ch);
    return q + "\"";
}

}  // namespace

void write_report_csv(const EvalReport& report, std::ostream& out) {
    out << "image_id,psnr_l,ssim_l,psnr_r,ssim_r,psnr_stereo,ssim_stereo\n";
    auto row = [&](const std::string& id, double pl, double sl, double pr, double sr, double ps, double ss) {
        out << csv_field(id) << ',' << format_metric(pl, 4) << ',' << format_metric(sl, 6) << ',' << format_metric(pr, 4) << ','
            << format_metric(sr, 6) << ',' << format_metric(ps, 4) << ',' << format_metric(ss, 6) << '\n';
    };
    for (const auto& s : report.images)
        row(s.id, s.psnr_left, s.ssim_left, s.psnr_right, s.ssim_right, s.psnr_stereo(), s.ssim_stereo());
    row("MEAN", report.mean_psnr_left, report.mean_ssim_left, report.mean_psnr_right, report.mean_ssim_right,
        report.mean_psnr_stereo, report.mean_ssim_stereo);
}

}  // namespace nafrssr
