#pragma once

// The two-branch stereo network: one shared feature branch run on both views,
// cross-view fusion after every block application, a pixel-shuffle tail, the
// bicubic global residual and the optional edge operator.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "nafrssr/blocks.hpp"
#include "nafrssr/image.hpp"
#include "nafrssr/parameter_store.hpp"
#include "nafrssr/weight_file.hpp"

namespace nafrssr {

enum class BlockKind { Naf, NafGc1, NafGc2 };
enum class CrossKind { Scam, Dsscam, None };

std::string to_string(BlockKind k);
std::string to_string(CrossKind k);
BlockKind parse_block_kind(const std::string& s);
CrossKind parse_cross_kind(const std::string& s);

// One weight set and how many times it is applied in a row.
struct BlockSlot {
    BlockKind kind = BlockKind::Naf;
    int repeats = 1;
};

struct ArchConfig {
    std::string name = "custom";
    int channels = 48;
    std::vector<BlockSlot> schedule;
    CrossKind cross = CrossKind::Scam;
    int expansion = 2;
    int group_width = 4;
    bool sca = true;
    bool edge = false;
    int upscale = 4;

    // Block applications, counting every recursive pass.
    int logical_blocks() const;
    // Throws std::invalid_argument naming the first violated rule.
    void validate() const;
    // "NAFGC1*4, NAFGC2:2*6" form; see parse_schedule.
    std::string schedule_string() const;
};

// Comma-separated items KIND[:repeats][*count], KIND in {NAF, NAFGC1, NAFGC2}.
std::vector<BlockSlot> parse_schedule(const std::string& text);

std::vector<std::string> preset_names();
ArchConfig preset(const std::string& name);

// key = value lines, '#' comments. Keys: preset, channels, blocks, schedule,
// recursion, cross, expansion, group_width, sca, edge. `preset` (if present)
// supplies the starting point; `recursion` sets the repeat count of every
// NAFGC2 entry written without one; `blocks` alone means NAF*blocks, and
// together with `schedule` it must equal the number of block applications.
ArchConfig parse_config(const std::string& text);
ArchConfig load_config(const std::filesystem::path& path);

struct ModelMacs {
    std::uint64_t convs = 0;      // every convolution, both views
    std::uint64_t attention = 0;  // row attention products
    std::uint64_t total() const { return convs + attention; }
};

// h * w * cout * (cin / groups) * k * k for a stride-1 "same" convolution.
std::uint64_t conv_macs(std::uint64_t h, std::uint64_t w, int cin, int cout, int k, int groups = 1);

// Copies are shallow: they share parameter storage with the original.
class Model {
  public:
    static Model build(const ArchConfig& config, std::uint64_t seed);

    // Views [n,3,h,w] -> [n,3,4h,4w]. Records a graph when grad mode is on.
    StereoPair forward(const StereoPair& lr) const;

    const ArchConfig& config() const { return config_; }
    ParameterStore& parameters() { return store_; }
    const ParameterStore& parameters() const { return store_; }

    std::size_t count_params() const { return store_.element_count(); }
    ModelMacs count_macs(int h, int w) const;

    std::vector<NamedArray> export_arrays() const;
    // Validates every name and shape before changing any value.
    void import_arrays(const std::vector<NamedArray>& arrays);
    void save_weights(const std::filesystem::path& path) const;
    void load_weights(const std::filesystem::path& path);

  private:
    using BlockParams = std::variant<blocks::NafBlockParams, blocks::NafGcBlock1Params, blocks::NafGcBlock2Params>;
    using CrossParams = std::variant<std::monostate, blocks::ScamParams, blocks::DsscamParams>;

    struct Slot {
        BlockParams params;
        int repeats = 1;
    };

    ArchConfig config_;
    ParameterStore store_;
    blocks::ConvParams intro_;
    std::vector<Slot> slots_;
    std::vector<CrossParams> cross_;  // one per block application
    blocks::ConvParams tail_;
    std::optional<blocks::EdgeOpParams> edge_;
};

}  // namespace nafrssr
