#pragma once

// 8-bit RGB images, P6 PPM files, bicubic resampling, and the patch pipeline
// that feeds training.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "nafrssr/tensor.hpp"

namespace nafrssr {

struct Image {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> samples;  // interleaved RGB, row-major

    Image() = default;
    Image(int w, int h);
    std::uint8_t& at(int x, int y, int ch) { return samples[(static_cast<std::size_t>(y) * width + x) * 3 + ch]; }
    std::uint8_t at(int x, int y, int ch) const { return samples[(static_cast<std::size_t>(y) * width + x) * 3 + ch]; }
    bool operator==(const Image&) const = default;
};

Image read_ppm(const std::filesystem::path& path);
void write_ppm(const Image& image, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_ppm(const Image& image);
Image decode_ppm(const std::vector<std::uint8_t>& bytes);

// [0,255] -> [0,1], shape [1,3,h,w].
Tensor image_to_tensor(const Image& image);
// Clamps to [0,1] and rounds half up. Uses batch index `n`.
Image tensor_to_image(const Tensor& t, int n = 0);
std::uint8_t quantize(double v);

// Resampling factor as a ratio, so that 1/4 and 4 are exact.
struct Scale {
    int num = 1;
    int den = 1;
};

// Cubic convolution kernel, a = -0.5.
double cubic_kernel(double x);

struct ResampleTaps {
    int first = 0;                   // leftmost source index before clamping
    std::vector<double> weights;     // normalized to sum 1
};

// Output length ceil(in * num / den). Sample centres map as
// u = (x + 0.5) * den / num - 0.5. When shrinking, the kernel is stretched by
// den / num to low-pass the input. Source indices are clamped at the border.
int resized_length(int in, Scale s);
std::vector<ResampleTaps> resample_taps(int in, Scale s);

// Separable resize of every [h, w] plane: horizontal pass, then vertical.
// Linear, so its backward pass is the transposed resample.
Tensor bicubic_resize(const Tensor& x, Scale s);
Image bicubic_resize(const Image& image, Scale s);

struct StereoPair {
    Tensor left;
    Tensor right;
};

struct StereoPatch {
    StereoPair lr;  // [1,3,30,90]
    StereoPair hr;  // [1,3,120,360]
    int y = 0;      // LR coordinates of the top-left corner
    int x = 0;
};

struct PatchGeometry {
    int height = 30;
    int width = 90;
    int stride = 20;
    int upscale = 4;
};

int patch_count(int h, int w, const PatchGeometry& g = {});
std::vector<StereoPatch> extract_patches(const StereoPair& lr, const StereoPair& hr, const PatchGeometry& g = {});

Tensor flip_horizontal(const Tensor& x);
Tensor flip_vertical(const Tensor& x);
// A horizontal flip mirrors the scene, so the eyes trade places.
StereoPatch augment(const StereoPatch& p, bool flip_h, bool flip_v);

struct ManifestEntry {
    std::string left;
    std::string right;
};

// One "left<TAB>right" pair per line; blank lines are skipped.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

}  // namespace nafrssr
