#include "nafrssr/parameter_store.hpp"

#include <cmath>
#include <stdexcept>

namespace nafrssr {

Shape storage_shape(const std::vector<int>& dims) {
    switch (dims.size()) {
        case 1:
            return Shape{1, dims[0], 1, 1};
        case 2:
            return Shape{1, 1, dims[0], dims[1]};
        case 3:
            return Shape{1, dims[0], dims[1], dims[2]};
        case 4:
            return Shape{dims[0], dims[1], dims[2], dims[3]};
        default:
            throw std::invalid_argument("parameter rank must be 1..4, got " + std::to_string(dims.size()));
    }
}

Tensor ParameterStore::add(std::string name, std::vector<int> dims, std::vector<double> values) {
    if (find(name)) throw std::invalid_argument("duplicate parameter name '" + name + "'");
    Tensor t(storage_shape(dims), std::move(values), true);
    entries_.push_back({std::move(name), std::move(dims), t});
    return t;
}

const ParameterEntry* ParameterStore::find(const std::string& name) const {
    for (const auto& e : entries_)
        if (e.name == name) return &e;
    return nullptr;
}

std::size_t ParameterStore::element_count() const {
    std::size_t total = 0;
    for (const auto& e : entries_) total += e.tensor.numel();
    return total;
}

void ParameterStore::zero_grad() {
    for (auto& e : entries_) e.tensor.zero_grad();
}

void ParameterStore::fill(double value) {
    for (auto& e : entries_)
        for (double& v : e.tensor.mutable_data()) v = value;
}

Tensor ParamBuilder::conv_weight(const std::string& name, int cout, int cin_per_group, int kh, int kw) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(cin_per_group * kh * kw));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> v(static_cast<std::size_t>(cout) * cin_per_group * kh * kw);
    for (double& x : v) x = static_cast<double>(static_cast<float>(dist(rng_)));
    return store_.add(name, {cout, cin_per_group, kh, kw}, std::move(v));
}

Tensor ParamBuilder::zeros(const std::string& name, std::vector<int> dims) {
    const std::size_t n = storage_shape(dims).numel();
    return store_.add(name, std::move(dims), std::vector<double>(n, 0.0));
}

Tensor ParamBuilder::ones(const std::string& name, std::vector<int> dims) {
    const std::size_t n = storage_shape(dims).numel();
    return store_.add(name, std::move(dims), std::vector<double>(n, 1.0));
}

Tensor ParamBuilder::values(const std::string& name, std::vector<int> dims, std::vector<double> values) {
    return store_.add(name, std::move(dims), std::move(values));
}

}  // namespace nafrssr
