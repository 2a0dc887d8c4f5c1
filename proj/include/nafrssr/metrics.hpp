#pragma once

// PSNR and SSIM on 8-bit RGB, and dataset evaluation with the stereo
// (left + right) / 2 rule.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "nafrssr/image.hpp"

namespace nafrssr {

class Model;

// 10 log10(255^2 / MSE) over all samples; +infinity for identical images.
double psnr(const Image& a, const Image& b);

struct SsimOptions {
    int window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
};

// Mean local SSIM over every position where the Gaussian window fits,
// computed per channel and averaged over R, G, B.
double ssim(const Image& a, const Image& b, const SsimOptions& opt = {});

struct ImageScores {
    std::string id;
    double psnr_left = 0, ssim_left = 0, psnr_right = 0, ssim_right = 0;
    double psnr_stereo() const { return (psnr_left + psnr_right) / 2; }
    double ssim_stereo() const { return (ssim_left + ssim_right) / 2; }
};

struct EvalReport {
    std::vector<ImageScores> images;
    // Dataset means, each summed in manifest order.
    double mean_psnr_left = 0, mean_ssim_left = 0, mean_psnr_right = 0, mean_ssim_right = 0;
    double mean_psnr_stereo = 0, mean_ssim_stereo = 0;
};

ImageScores score_pair(std::string id, const Image& sr_left, const Image& sr_right, const Image& hr_left, const Image& hr_right);
EvalReport summarize(std::vector<ImageScores> images);

// Reads each HR pair, makes the LR pair by bicubic /4 (kept as 8-bit images),
// runs the model and scores the quantized output against HR.
EvalReport evaluate_dataset(const Model& model, const std::filesystem::path& manifest, const std::filesystem::path& hr_dir);

// image_id,psnr_l,ssim_l,psnr_r,ssim_r,psnr_stereo,ssim_stereo then MEAN.
void write_report_csv(const EvalReport& report, std::ostream& out);
std::string format_metric(double v, int precision);

}  // namespace nafrssr
