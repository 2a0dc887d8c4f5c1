#include "nafrssr/model.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "nafrssr/ops.hpp"

namespace nafrssr {

// ---- names ----

std::string to_string(BlockKind k) {
    switch (k) {
        case BlockKind::Naf:
            return "NAF";
        case BlockKind::NafGc1:
            return "NAFGC1";
        case BlockKind::NafGc2:
            return "NAFGC2";
    }
    return "?";
}

std::string to_string(CrossKind k) {
    switch (k) {
        case CrossKind::Scam:
            return "SCAM";
        case CrossKind::Dsscam:
            return "DSSCAM";
        case CrossKind::None:
            return "none";
    }
    return "?";
}

namespace {

std::string upper(std::string s) {
    for (char& ch : s) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    return s;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

int parse_int(const std::string& s, const std::string& what) {
    std::size_t used = 0;
    int v = 0;
    try {
        v = std::stoi(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != s.size()) throw std::invalid_argument(what + ": expected an integer, got '" + s + "'");
    return v;
}

bool parse_bool(const std::string& s, const std::string& what) {
    const std::string u = upper(s);
    if (u == "1" || u == "TRUE" || u == "ON" || u == "YES") return true;
    if (u == "0" || u == "FALSE" || u == "OFF" || u == "NO") return false;
    throw std::invalid_argument(what + ": expected true/false, got '" + s + "'");
}

}  // namespace

BlockKind parse_block_kind(const std::string& s) {
    const std::string u = upper(trim(s));
    if (u == "NAF") return BlockKind::Naf;
    if (u == "NAFGC1") return BlockKind::NafGc1;
    if (u == "NAFGC2") return BlockKind::NafGc2;
    throw std::invalid_argument("unknown block kind '" + s + "' (NAF, NAFGC1, NAFGC2)");
}

CrossKind parse_cross_kind(const std::string& s) {
    const std::string u = upper(trim(s));
    if (u == "SCAM") return CrossKind::Scam;
    if (u == "DSSCAM") return CrossKind::Dsscam;
    if (u == "NONE") return CrossKind::None;
    throw std::invalid_argument("unknown cross module '" + s + "' (SCAM, DSSCAM, none)");
}

// ---- config ----

int ArchConfig::logical_blocks() const {
    int n = 0;
    for (const auto& s : schedule) n += s.repeats;
    return n;
}

void ArchConfig::validate() const {
    auto fail = [this](const std::string& msg) { throw std::invalid_argument("config '" + name + "': " + msg); };
    if (channels < 1) fail("channels must be positive");
    if (expansion < 1) fail("expansion must be positive");
    if (group_width < 1) fail("group_width must be positive");
    if (upscale != 4) fail("upscale is fixed at 4");
    if (schedule.empty()) fail("schedule is empty");
    if ((channels * expansion) % 2 != 0) fail("expansion * channels must be even");
    for (std::size_t i = 0; i < schedule.size(); ++i) {
        const auto& s = schedule[i];
        if (s.repeats < 1) fail("block " + std::to_string(i) + ": repeat count must be >= 1");
        if (s.repeats > 1 && s.kind != BlockKind::NafGc2)
            fail("block " + std::to_string(i) + ": recursion is only allowed on NAFGC2 blocks");
        if (s.kind != BlockKind::Naf && channels % group_width != 0)
            fail("channels " + std::to_string(channels) + " not divisible by group_width " + std::to_string(group_width));
    }
}

std::vector<BlockSlot> parse_schedule(const std::string& text) {
    std::vector<BlockSlot> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) throw std::invalid_argument("schedule: empty item in '" + text + "'");
        int count = 1;
        if (auto star = item.find('*'); star != std::string::npos) {
            count = parse_int(trim(item.substr(star + 1)), "schedule count");
            item = trim(item.substr(0, star));
        }
        BlockSlot slot;
        if (auto colon = item.find(':'); colon != std::string::npos) {
            slot.repeats = parse_int(trim(item.substr(colon + 1)), "schedule repeats");
            item = trim(item.substr(0, colon));
        }
        slot.kind = parse_block_kind(item);
        if (count < 1) throw std::invalid_argument("schedule: count must be >= 1");
        out.insert(out.end(), static_cast<std::size_t>(count), slot);
    }
    if (out.empty()) throw std::invalid_argument("schedule: empty");
    return out;
}

std::string ArchConfig::schedule_string() const {
    std::string out;
    for (std::size_t i = 0; i < schedule.size();) {
        std::size_t j = i;
        while (j < schedule.size() && schedule[j].kind == schedule[i].kind && schedule[j].repeats == schedule[i].repeats) ++j;
        if (!out.empty()) out += ", ";
        out += to_string(schedule[i].kind);
        if (schedule[i].repeats != 1) out += ":" + std::to_string(schedule[i].repeats);
        if (j - i > 1) out += "*" + std::to_string(j - i);
        i = j;
    }
    return out;
}

namespace {

ArchConfig make(std::string name, int c, const std::string& schedule, CrossKind cross, bool sca, bool edge) {
    ArchConfig a;
    a.name = std::move(name);
    a.channels = c;
    a.schedule = parse_schedule(schedule);
    a.cross = cross;
    a.sca = sca;
    a.edge = edge;
    return a;
}

std::vector<ArchConfig> all_presets() {
    const auto S = CrossKind::Scam, D = CrossKind::Dsscam;
    return {
        make("NAFSSR-T", 48, "NAF*16", S, true, false),
        make("T-DSSCAM", 48, "NAF*16", D, true, false),
        make("T-NoSCA", 48, "NAF*16", S, false, false),
        make("T-NAFGCBlock-1", 48, "NAFGC1*16", S, false, false),
        make("T-edge", 48, "NAF*16", S, true, true),
        make("NAFSSR-S", 64, "NAF*32", S, true, false),
        make("NAFSSR-B", 96, "NAF*64", S, true, false),
        make("NAFRSSR-M", 64, "NAFGC1*4, NAFGC2:2*6", D, false, true),
        make("NAFRSSR-T", 72, "NAFGC1*4, NAFGC2:2*6", D, false, true),
        make("NAFRSSR-S", 80, "NAFGC1*34", D, false, true),
        make("NAFRSSR-B", 120, "NAFGC1*70", D, false, true),
        make("tiny", 16, "NAFGC1, NAFGC2", D, false, true),
    };
}

}  // namespace

std::vector<std::string> preset_names() {
    std::vector<std::string> out;
    for (const auto& p : all_presets()) out.push_back(p.name);
    return out;
}

ArchConfig preset(const std::string& name) {
    for (auto& p : all_presets())
        if (upper(p.name) == upper(name)) return p;
    std::string known;
    for (const auto& n : preset_names()) known += (known.empty() ? "" : ", ") + n;
    throw std::invalid_argument("unknown preset '" + name + "' (known: " + known + ")");
}

ArchConfig parse_config(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        if (kv.count(key)) throw std::invalid_argument("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
        kv[key] = trim(line.substr(eq + 1));
    }

    ArchConfig a;
    bool has_schedule = false;
    if (auto it = kv.find("preset"); it != kv.end()) {
        a = preset(it->second);
        has_schedule = true;
        kv.erase(it);
    }
    int blocks = -1;
    int recursion = -1;
    std::string schedule_text;
    for (const auto& [key, value] : kv) {
        if (key == "channels") a.channels = parse_int(value, key);
        else if (key == "blocks") blocks = parse_int(value, key);
        else if (key == "schedule") schedule_text = value;
        else if (key == "recursion") recursion = parse_int(value, key);
        else if (key == "cross") a.cross = parse_cross_kind(value);
        else if (key == "expansion") a.expansion = parse_int(value, key);
        else if (key == "group_width") a.group_width = parse_int(value, key);
        else if (key == "sca") a.sca = parse_bool(value, key);
        else if (key == "edge") a.edge = parse_bool(value, key);
        else if (key == "name") a.name = value;
        else throw std::invalid_argument("config: unknown key '" + key + "'");
    }
    if (!schedule_text.empty()) {
        // Explicit repeat counts survive; bare NAFGC2 entries take `recursion`.
        std::vector<BlockSlot> slots;
        std::stringstream items(schedule_text);
        std::string item;
        while (std::getline(items, item, ',')) {
            auto parsed = parse_schedule(item);
            if (recursion > 0 && item.find(':') == std::string::npos)
                for (auto& s : parsed)
                    if (s.kind == BlockKind::NafGc2) s.repeats = recursion;
            slots.insert(slots.end(), parsed.begin(), parsed.end());
        }
        a.schedule = std::move(slots);
        has_schedule = true;
    } else if (blocks > 0 && !has_schedule) {
        a.schedule.assign(static_cast<std::size_t>(blocks), BlockSlot{});
        has_schedule = true;
    } else if (recursion > 0) {
        for (auto& s : a.schedule)
            if (s.kind == BlockKind::NafGc2) s.repeats = recursion;
    }
    if (!has_schedule) throw std::invalid_argument("config: needs preset, schedule or blocks");
    if (blocks > 0 && a.logical_blocks() != blocks)
        throw std::invalid_argument("config: blocks = " + std::to_string(blocks) + " but schedule applies " +
                                    std::to_string(a.logical_blocks()) + " blocks");
    a.validate();
    return a;
}

ArchConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

// ---- build ----

Model Model::build(const ArchConfig& config, std::uint64_t seed) {
    config.validate();
    Model m;
    m.config_ = config;
    ParamBuilder pb(m.store_, seed);
    const int c = config.channels;
    const blocks::BlockDims dims{c, config.expansion, config.group_width};

    m.intro_.weight = pb.conv_weight("intro.weight", c, 3, 3, 3);
    m.intro_.bias = pb.zeros("intro.bias", {c});
    m.intro_.padding = 1;

    int application = 0;
    for (std::size_t i = 0; i < config.schedule.size(); ++i) {
        const auto& s = config.schedule[i];
        const std::string prefix = "blocks." + std::to_string(i);
        Slot slot;
        slot.repeats = s.repeats;
        switch (s.kind) {
            case BlockKind::Naf:
                slot.params = blocks::make_naf_block(pb, prefix, dims, config.sca);
                break;
            case BlockKind::NafGc1:
                slot.params = blocks::make_nafgc_block1(pb, prefix, dims);
                break;
            case BlockKind::NafGc2:
                slot.params = blocks::make_nafgc_block2(pb, prefix, dims);
                break;
        }
        m.slots_.push_back(std::move(slot));
        for (int r = 0; r < s.repeats; ++r, ++application) {
            const std::string cp = "cross." + std::to_string(application);
            switch (config.cross) {
                case CrossKind::Scam:
                    m.cross_.emplace_back(blocks::make_scam(pb, cp, c));
                    break;
                case CrossKind::Dsscam:
                    m.cross_.emplace_back(blocks::make_dsscam(pb, cp, c));
                    break;
                case CrossKind::None:
                    m.cross_.emplace_back(std::monostate{});
                    break;
            }
        }
    }

    const int out = 3 * config.upscale * config.upscale;
    m.tail_.weight = pb.conv_weight("tail.weight", out, c, 3, 3);
    m.tail_.bias = pb.zeros("tail.bias", {out});
    m.tail_.padding = 1;
    if (config.edge) m.edge_ = blocks::make_edge_op(pb, "edge");
    return m;
}

// ---- forward ----

namespace {

struct ApplyBlock {
    const Tensor& x;
    Tensor operator()(const blocks::NafBlockParams& p) const { return blocks::naf_block(x, p); }
    Tensor operator()(const blocks::NafGcBlock1Params& p) const { return blocks::nafgc_block1(x, p); }
    Tensor operator()(const blocks::NafGcBlock2Params& p) const { return blocks::nafgc_block2(x, p); }
};

}  // namespace

StereoPair Model::forward(const StereoPair& lr) const {
    const Shape s = lr.left.shape();
    if (lr.right.shape() != s)
        throw std::invalid_argument("forward: left " + s.str() + " and right " + lr.right.shape().str() + " differ");
    if (s.c != 3) throw std::invalid_argument("forward: expected 3 input channels, got " + std::to_string(s.c));
    if (s.h < 3 || s.w < 3)
        throw std::invalid_argument("forward: input " + std::to_string(s.h) + "x" + std::to_string(s.w) + " smaller than 3x3");

    Tensor l = blocks::conv(lr.left, intro_);
    Tensor r = blocks::conv(lr.right, intro_);
    std::size_t application = 0;
    for (const Slot& slot : slots_) {
        for (int pass = 0; pass < slot.repeats; ++pass) {
            l = std::visit(ApplyBlock{l}, slot.params);
            r = std::visit(ApplyBlock{r}, slot.params);
            const CrossParams& cp = cross_[application++];
            if (const auto* p = std::get_if<blocks::ScamParams>(&cp)) std::tie(l, r) = blocks::scam(l, r, *p);
            else if (const auto* q = std::get_if<blocks::DsscamParams>(&cp)) std::tie(l, r) = blocks::dsscam(l, r, *q);
        }
    }

    const Scale up{config_.upscale, 1};
    auto finish = [&](const Tensor& features, const Tensor& input) {
        Tensor delta = ops::pixel_shuffle(blocks::conv(features, tail_), config_.upscale);
        Tensor sr = ops::add(bicubic_resize(input, up), delta);
        return edge_ ? blocks::edge_augment(sr, *edge_) : sr;
    };
    return {finish(l, lr.left), finish(r, lr.right)};
}

// ---- counting ----

std::uint64_t conv_macs(std::uint64_t h, std::uint64_t w, int cin, int cout, int k, int groups) {
    return h * w * static_cast<std::uint64_t>(cout) * static_cast<std::uint64_t>(cin / groups) * static_cast<std::uint64_t>(k * k);
}

ModelMacs Model::count_macs(int h, int w) const {
    const std::uint64_t H = static_cast<std::uint64_t>(h), W = static_cast<std::uint64_t>(w);
    const int c = config_.channels, wide = c * config_.expansion, half = wide / 2, groups = c / config_.group_width;
    std::uint64_t per_view = conv_macs(H, W, 3, c, 3);
    std::uint64_t cross = 0, attention = 0;
    for (const auto& s : config_.schedule) {
        std::uint64_t block = 0;
        switch (s.kind) {
            case BlockKind::Naf:
                block = conv_macs(H, W, c, wide, 1) + conv_macs(H, W, wide, wide, 3, wide) + conv_macs(H, W, half, c, 1) +
                        conv_macs(H, W, c, wide, 1) + conv_macs(H, W, half, c, 1);
                if (config_.sca) block += conv_macs(1, 1, half, half, 1);
                break;
            case BlockKind::NafGc1:
                block = conv_macs(H, W, c, wide, 1) + conv_macs(H, W, wide, wide, 3, wide) + conv_macs(H, W, half, c, 3, groups) +
                        conv_macs(H, W, c, wide, 1) + conv_macs(H, W, half, c, 1);
                break;
            case BlockKind::NafGc2:
                block = conv_macs(H, W, c, wide, 1) + conv_macs(H, W, wide, wide, 3, wide) + conv_macs(H, W, half, wide, 1) +
                        conv_macs(H, W, wide, c, 3, groups);
                break;
        }
        per_view += block * static_cast<std::uint64_t>(s.repeats);
        for (int r = 0; r < s.repeats; ++r) {
            if (config_.cross == CrossKind::None) continue;
            // Two directions, each Q.K^T then A.V over every row.
            attention += 2 * 2 * H * W * W * static_cast<std::uint64_t>(c);
            if (config_.cross == CrossKind::Scam) cross += 4 * conv_macs(H, W, c, c, 1);
            else cross += 2 * conv_macs(H, W, c, c, 3, c);
        }
    }
    const int u = config_.upscale;
    per_view += conv_macs(H, W, c, 3 * u * u, 3);
    if (edge_) per_view += conv_macs(H * u, W * u, 3, 3, 3, 3);
    return {2 * per_view + cross, attention};
}

// ---- weights ----

std::vector<NamedArray> Model::export_arrays() const {
    std::vector<NamedArray> out;
    for (const auto& e : store_.entries()) {
        NamedArray a;
        a.name = e.name;
        for (int d : e.dims) a.dims.push_back(static_cast<std::uint32_t>(d));
        for (double v : e.tensor.data()) a.values.push_back(static_cast<float>(v));
        out.push_back(std::move(a));
    }
    return out;
}

namespace {

template <typename T>
std::string dims_str(const std::vector<T>& d) {
    std::string s = "[";
    for (std::size_t i = 0; i < d.size(); ++i) s += (i ? "," : "") + std::to_string(d[i]);
    return s + "]";
}

}  // namespace

void Model::import_arrays(const std::vector<NamedArray>& arrays) {
    std::unordered_map<std::string, const NamedArray*> by_name;
    for (const auto& a : arrays)
        if (!by_name.emplace(a.name, &a).second) throw WeightFileError("weight file repeats array '" + a.name + "'");
    for (const auto& e : store_.entries()) {
        auto it = by_name.find(e.name);
        if (it == by_name.end())
            throw WeightFileError("shape mismatch: parameter '" + e.name + "' " + dims_str(e.dims) + " is missing from the weight file");
        std::vector<std::uint32_t> want(e.dims.begin(), e.dims.end());
        if (it->second->dims != want)
            throw WeightFileError("shape mismatch: parameter '" + e.name + "' is " + dims_str(e.dims) + " in the model but " +
                                  dims_str(it->second->dims) + " in the weight file");
    }
    if (arrays.size() != store_.entries().size())
        for (const auto& a : arrays)
            if (!store_.find(a.name)) throw WeightFileError("weight file has array '" + a.name + "' that the model does not use");
    for (auto& e : store_.entries()) {
        const auto& values = by_name.at(e.name)->values;
        auto dst = e.tensor.mutable_data();
        for (std::size_t i = 0; i < values.size(); ++i) dst[i] = static_cast<double>(values[i]);
    }
}

void Model::save_weights(const std::filesystem::path& path) const { write_arrays(path, export_arrays()); }

void Model::load_weights(const std::filesystem::path& path) { import_arrays(read_arrays(path)); }

}  // namespace nafrssr
