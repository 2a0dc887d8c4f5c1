#pragma once

// Container for named float arrays:
//   "NFRW", u32 version (1), u32 array count, then per array
//   u16 name length, UTF-8 name, u8 rank, u32 dims[rank], f32 values.
// All integers and floats are little-endian.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace nafrssr {

struct WeightFileError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NamedArray {
    std::string name;
    std::vector<std::uint32_t> dims;
    std::vector<float> values;
};

inline constexpr std::uint32_t kWeightFileVersion = 1;

std::vector<std::uint8_t> encode_arrays(const std::vector<NamedArray>& arrays);
// Parses the whole buffer before returning; throws WeightFileError.
std::vector<NamedArray> decode_arrays(const std::vector<std::uint8_t>& bytes);

void write_arrays(const std::filesystem::path& path, const std::vector<NamedArray>& arrays);
std::vector<NamedArray> read_arrays(const std::filesystem::path& path);

}  // namespace nafrssr
