#pragma once

// MSE loss, AdamW, the cosine learning-rate schedule and a deterministic
// single-threaded training loop.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <stdexcept>
#include <vector>

#include "nafrssr/image.hpp"
#include "nafrssr/model.hpp"
#include "nafrssr/parameter_store.hpp"

namespace nafrssr {

// Mean over both views and every element of (sr - hr)^2.
Tensor mse_loss(const StereoPair& sr, const StereoPair& hr);

struct CosineSchedule {
    double lr_max = 3e-3;
    double lr_min = 1e-7;
    std::int64_t total_steps = 400000;

    // lr_min + (lr_max - lr_min) (1 + cos(pi t / T)) / 2 for 0 <= t <= T.
    double lr_at(std::int64_t t) const;
};

struct AdamWOptions {
    double beta1 = 0.9;
    double beta2 = 0.9;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

class AdamW {
  public:
    AdamW(ParameterStore& params, AdamWOptions options = {});

    // One update from the gradients currently held by the parameters.
    void step(double lr);
    std::int64_t steps_taken() const { return t_; }
    const AdamWOptions& options() const { return opt_; }

    // Sidecar arrays "m/<name>", "v/<name>" and "t".
    std::vector<NamedArray> export_state() const;
    void import_state(const std::vector<NamedArray>& arrays);
    void save_state(const std::filesystem::path& path) const { write_arrays(path, export_state()); }
    void load_state(const std::filesystem::path& path) { import_state(read_arrays(path)); }

  private:
    ParameterStore& params_;
    AdamWOptions opt_;
    std::vector<std::vector<double>> m_, v_;
    std::int64_t t_ = 0;
};

struct LossRecord {
    std::int64_t step = 0;
    double lr = 0;
    double loss = 0;
};

struct TrainOptions {
    std::int64_t steps = 0;
    int batch_size = 32;  // capped at the number of patches
    std::uint64_t seed = 0;
    bool augment = true;  // random horizontal / vertical flips
    CosineSchedule schedule{};  // total_steps is replaced by `steps`
    AdamWOptions adamw{};
    std::function<void(const LossRecord&)> on_step;
};

struct TrainingDiverged : std::runtime_error {
    std::int64_t step;
    TrainingDiverged(std::int64_t s, double loss);
};

struct TrainResult {
    std::vector<LossRecord> trace;
};

// Per epoch: shuffle with the seeded generator, then walk the permutation in
// batches; each sample is flipped independently when augment is set.
TrainResult train(Model& model, const std::vector<StereoPatch>& patches, const TrainOptions& options, AdamW* optimizer = nullptr);

void write_loss_csv(const std::vector<LossRecord>& trace, std::ostream& out);

}  // namespace nafrssr
