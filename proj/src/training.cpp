#include "nafrssr/training.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>
#include <random>
#include <unordered_map>

#include "nafrssr/ops.hpp"

namespace nafrssr {

Tensor mse_loss(const StereoPair& sr, const StereoPair& hr) {
    for (auto [a, b] : {std::pair{&sr.left, &hr.left}, std::pair{&sr.right, &hr.right}})
        if (a->shape() != b->shape())
            throw std::invalid_argument("mse_loss: prediction " + a->shape().str() + " vs target " + b->shape().str());
    const double count = 2.0 * static_cast<double>(sr.left.numel());
    Tensor total = ops::add(ops::squared_error_sum(sr.left, hr.left), ops::squared_error_sum(sr.right, hr.right));
    return ops::scale(total, 1.0 / count);
}

double CosineSchedule::lr_at(std::int64_t t) const {
    if (total_steps < 1) throw std::invalid_argument("schedule: total_steps must be positive");
    if (t < 0 || t > total_steps)
        throw std::out_of_range("schedule: step " + std::to_string(t) + " outside [0, " + std::to_string(total_steps) + "]");
    if (t == total_steps) return lr_min;
    const double phase = std::numbers::pi * static_cast<double>(t) / static_cast<double>(total_steps);
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(phase));
}

// ---- AdamW ----

AdamW::AdamW(ParameterStore& params, AdamWOptions options) : params_(params), opt_(options) {
    for (const auto& e : params_.entries()) {
        m_.emplace_back(e.tensor.numel(), 0.0);
        v_.emplace_back(e.tensor.numel(), 0.0);
    }
}

void AdamW::step(double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    auto& entries = params_.entries();
    if (entries.size() != m_.size()) throw std::logic_error("AdamW: parameter set changed after construction");
    for (std::size_t k = 0; k < entries.size(); ++k) {
        auto p = entries[k].tensor.mutable_data();
        auto g = entries[k].tensor.grad();
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double gi = g.empty() ? 0.0 : g[i];
            m[i] = opt_.beta1 * m[i] + (1.0 - opt_.beta1) * gi;
            v[i] = opt_.beta2 * v[i] + (1.0 - opt_.beta2) * gi * gi;
            if (opt_.weight_decay != 0.0) p[i] -= lr * opt_.weight_decay * p[i];
            p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + opt_.eps);
        }
    }
}

std::vector<NamedArray> AdamW::export_state() const {
    std::vector<NamedArray> out;
    const auto& entries = params_.entries();
    for (const char* which : {"m/", "v/"})
        for (std::size_t k = 0; k < entries.size(); ++k) {
            NamedArray a;
            a.name = which + entries[k].name;
            a.dims.assign(entries[k].dims.begin(), entries[k].dims.end());
            const auto& src = which[0] == 'm' ? m_[k] : v_[k];
            a.values.assign(src.begin(), src.end());
            out.push_back(std::move(a));
        }
    out.push_back({"t", {1}, {static_cast<float>(t_)}});
    return out;
}

void AdamW::import_state(const std::vector<NamedArray>& arrays) {
    std::unordered_map<std::string, const NamedArray*> by_name;
    for (const auto& a : arrays) by_name[a.name] = &a;
    const auto& entries = params_.entries();
    auto lookup = [&](const std::string& name, const std::vector<int>& dims) {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw WeightFileError("optimizer state is missing '" + name + "'");
        if (it->second->dims != std::vector<std::uint32_t>(dims.begin(), dims.end()))
            throw WeightFileError("optimizer state '" + name + "' has the wrong shape");
        return it->second;
    };
    for (const auto& e : entries) {
        lookup("m/" + e.name, e.dims);
        lookup("v/" + e.name, e.dims);
    }
    const NamedArray* t = lookup("t", {1});
    if (arrays.size() != 2 * entries.size() + 1) throw WeightFileError("optimizer state has unexpected arrays");
    for (std::size_t k = 0; k < entries.size(); ++k) {
        const auto& m = by_name.at("m/" + entries[k].name)->values;
        const auto& v = by_name.at("v/" + entries[k].name)->values;
        m_[k].assign(m.begin(), m.end());
        v_[k].assign(v.begin(), v.end());
    }
    t_ = static_cast<std::int64_t>(t->values[0]);
}

// ---- training loop ----

TrainingDiverged::TrainingDiverged(std::int64_t s, double loss)
    : std::runtime_error("training diverged at step " + std::to_string(s) + " (loss " + std::to_string(loss) + ")"), step(s) {}

namespace {

// Stacks [1,c,h,w] tensors along the batch axis.
Tensor stack(const std::vector<const Tensor*>& items) {
    Shape s = items.front()->shape();
    const std::size_t each = s.numel();
    s.n = static_cast<int>(items.size());
    std::vector<double> data;
    data.reserve(each * items.size());
    for (const Tensor* t : items) data.insert(data.end(), t->data().begin(), t->data().end());
    return Tensor(s, std::move(data));
}

}  // namespace

TrainResult train(Model& model, const std::vector<StereoPatch>& patches, const TrainOptions& options, AdamW* optimizer) {
    if (options.steps < 0) throw std::invalid_argument("train: negative step count");
    if (options.steps == 0) return {};
    if (patches.empty()) throw std::invalid_argument("train: no training patches");
    if (options.batch_size < 1) throw std::invalid_argument("train: batch size must be positive");
    for (const auto& p : patches)
        if (p.lr.left.shape() != patches.front().lr.left.shape() || p.hr.left.shape() != patches.front().hr.left.shape())
            throw std::invalid_argument("train: patches differ in size");

    AdamW local(model.parameters(), options.adamw);
    AdamW& opt = optimizer ? *optimizer : local;
    CosineSchedule schedule = options.schedule;
    schedule.total_steps = options.steps;
    std::mt19937_64 rng(options.seed);
    std::bernoulli_distribution coin(0.5);
    const std::size_t batch = std::min<std::size_t>(static_cast<std::size_t>(options.batch_size), patches.size());

    std::vector<std::size_t> order(patches.size());
    std::size_t cursor = order.size();
    TrainResult result;
    for (std::int64_t step = 0; step < options.steps; ++step) {
        std::vector<StereoPatch> picked;
        for (std::size_t b = 0; b < batch; ++b) {
            if (cursor == order.size()) {
                for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
                std::shuffle(order.begin(), order.end(), rng);
                cursor = 0;
            }
            const StereoPatch& p = patches[order[cursor++]];
            if (options.augment) {
                const bool h = coin(rng), v = coin(rng);
                picked.push_back(augment(p, h, v));
            } else {
                picked.push_back(p);
            }
        }
        auto gather = [&](auto member) {
            std::vector<const Tensor*> items;
            for (const auto& p : picked) items.push_back(&member(p));
            return stack(items);
        };
        const StereoPair lr{gather([](const StereoPatch& p) -> const Tensor& { return p.lr.left; }),
                            gather([](const StereoPatch& p) -> const Tensor& { return p.lr.right; })};
        const StereoPair hr{gather([](const StereoPatch& p) -> const Tensor& { return p.hr.left; }),
                            gather([](const StereoPatch& p) -> const Tensor& { return p.hr.right; })};

        model.parameters().zero_grad();
        Tensor loss = mse_loss(model.forward(lr), hr);
        const double value = loss.item();
        if (!std::isfinite(value)) throw TrainingDiverged(step, value);
        loss.backward();
        const double lr_now = schedule.lr_at(step);
        opt.step(lr_now);
        LossRecord rec{step, lr_now, value};
        result.trace.push_back(rec);
        if (options.on_step) options.on_step(rec);
    }
    return result;
}

void write_loss_csv(const std::vector<LossRecord>& trace, std::ostream& out) {
    out << "step,lr,loss\n";
    char buf[96];
    for (const auto& r : trace) {
        std::snprintf(buf, sizeof buf, "%lld,%.9g,%.12g\n", static_cast<long long>(r.step), r.lr, r.loss);
        out << buf;
    }
}

}  // namespace nafrssr
