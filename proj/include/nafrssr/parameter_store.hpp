#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "nafrssr/tensor.hpp"

namespace nafrssr {

/// A named trainable array. `dims` is the logical shape written to weight
/// files; `tensor` holds the values in 4-D storage (vectors live in the
/// channel axis, 2-D kernels in the spatial axes).
struct ParameterEntry {
    std::string name;
    std::vector<int> dims;
    Tensor tensor;
};

Shape storage_shape(const std::vector<int>& dims);

/// Ordered collection of unique parameters. Enumeration order is insertion
/// order, which the model builder makes deterministic. Shared weights are
/// registered once and referenced by every user.
class ParameterStore {
  public:
    Tensor add(std::string name, std::vector<int> dims, std::vector<double> values);

    const std::vector<ParameterEntry>& entries() const { return entries_; }
    std::vector<ParameterEntry>& entries() { return entries_; }
    const ParameterEntry* find(const std::string& name) const;

    std::size_t element_count() const;
    void zero_grad();
    void fill(double value);

  private:
    std::vector<ParameterEntry> entries_;
};

/// Creates initialized parameters in a store. Draws come from one seeded
/// generator in creation order; every value is rounded to 32-bit precision so
/// a freshly built model survives a weight-file round trip unchanged.
class ParamBuilder {
  public:
    ParamBuilder(ParameterStore& store, std::uint64_t seed) : store_(store), rng_(seed) {}

    // Kaiming-uniform over fan-in: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    Tensor conv_weight(const std::string& name, int cout, int cin_per_group, int kh, int kw);
    Tensor zeros(const std::string& name, std::vector<int> dims);
    Tensor ones(const std::string& name, std::vector<int> dims);
    Tensor values(const std::string& name, std::vector<int> dims, std::vector<double> values);

  private:
    ParameterStore& store_;
    std::mt19937_64 rng_;
};

}  // namespace nafrssr
