#include "nafrssr/weight_file.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

namespace nafrssr {

namespace {

static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559);

class Writer {
  public:
    void u8(std::uint8_t v) { out_.push_back(v); }
    void u16(std::uint16_t v) { le(v, 2); }
    void u32(std::uint32_t v) { le(v, 4); }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void raw(const std::string& s) { out_.insert(out_.end(), s.begin(), s.end()); }
    std::vector<std::uint8_t> take() { return std::move(out_); }

  private:
    void le(std::uint32_t v, int bytes) {
        for (int i = 0; i < bytes; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    std::vector<std::uint8_t> out_;
};

class Reader {
  public:
    explicit Reader(const std::vector<std::uint8_t>& b) : b_(b) {}
    std::uint8_t u8() { return static_cast<std::uint8_t>(le(1)); }
    std::uint16_t u16() { return static_cast<std::uint16_t>(le(2)); }
    std::uint32_t u32() { return le(4); }
    float f32() { return std::bit_cast<float>(u32()); }
    std::string raw(std::size_t n) {
        need(n);
        std::string s(b_.begin() + static_cast<std::ptrdiff_t>(pos_), b_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
        pos_ += n;
        return s;
    }
    void need(std::size_t n) const {
        if (b_.size() - pos_ < n)
            throw WeightFileError("weight file truncated at byte " + std::to_string(pos_) + " (need " + std::to_string(n) +
                                  " more, have " + std::to_string(b_.size() - pos_) + ")");
    }
    bool done() const { return pos_ == b_.size(); }
    std::size_t pos() const { return pos_; }

  private:
    std::uint32_t le(int bytes) {
        need(static_cast<std::size_t>(bytes));
        std::uint32_t v = 0;
        for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint32_t>(b_[pos_++]) << (8 * i);
        return v;
    }
    const std::vector<std::uint8_t>& b_;
    std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_arrays(const std::vector<NamedArray>& arrays) {
    Writer w;
    w.raw("NFRW");
    w.u32(kWeightFileVersion);
    w.u32(static_cast<std::uint32_t>(arrays.size()));
    for (const auto& a : arrays) {
        if (a.name.size() > 0xFFFF) throw WeightFileError("array name too long: " + a.name.substr(0, 64));
        if (a.dims.size() > 0xFF) throw WeightFileError("array rank too large: " + a.name);
        std::size_t count = 1;
        for (auto d : a.dims) count *= d;
        if (count != a.values.size()) throw WeightFileError("array " + a.name + ": dims do not match value count");
        w.u16(static_cast<std::uint16_t>(a.name.size()));
        w.raw(a.name);
        w.u8(static_cast<std::uint8_t>(a.dims.size()));
        for (auto d : a.dims) w.u32(d);
        for (float v : a.values) w.f32(v);
    }
    return w.take();
}

std::vector<NamedArray> decode_arrays(const std::vector<std::uint8_t>& bytes) {
    Reader r(bytes);
    if (bytes.size() < 4 || std::memcmp(bytes.data(), "NFRW", 4) != 0) throw WeightFileError("not a weight file (bad magic)");
    r.raw(4);
    const std::uint32_t version = r.u32();
    if (version != kWeightFileVersion)
        throw WeightFileError("unsupported weight file version " + std::to_string(version) + " (expected " +
                              std::to_string(kWeightFileVersion) + ")");
    const std::uint32_t count = r.u32();
    std::vector<NamedArray> out;
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedArray a;
        a.name = r.raw(r.u16());
        const std::uint8_t rank = r.u8();
        std::uint64_t n = 1;
        for (int k = 0; k < rank; ++k) {
            a.dims.push_back(r.u32());
            n *= a.dims.back();
            if (n > bytes.size()) throw WeightFileError("array " + a.name + ": size exceeds file");
        }
        r.need(static_cast<std::size_t>(n) * 4);
        a.values.resize(static_cast<std::size_t>(n));
        for (float& v : a.values) v = r.f32();
        out.push_back(std::move(a));
    }
    if (!r.done()) throw WeightFileError("trailing bytes after array " + std::to_string(count));
    return out;
}

void write_arrays(const std::filesystem::path& path, const std::vector<NamedArray>& arrays) {
    const auto bytes = encode_arrays(arrays);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw WeightFileError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw WeightFileError("write failed: " + path.string());
}

std::vector<NamedArray> read_arrays(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw WeightFileError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return decode_arrays(bytes);
    } catch (const WeightFileError& e) {
        throw WeightFileError(path.string() + ": " + e.what());
    }
}

}  // namespace nafrssr
