#pragma once

// Named parameter containers and the GALR1 checkpoint format.

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "tunein/tensor.hpp"

namespace tunein {

using Rng = std::mt19937_64;

// Parameters keyed by hierarchical name. Iteration (and therefore
// serialization) order is lexicographic by name.
template <typename T>
class ParameterSet {
 public:
  // Registers a zero-filled trainable tensor; duplicate names throw.
  Tensor<T>& create(const std::string& name, Shape shape);
  Tensor<T>& get(const std::string& name);
  const Tensor<T>& get(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  std::vector<std::string> names() const;
  // Names that start with any of the prefixes.
  std::vector<std::string> names_with_prefix(const std::vector<std::string>& prefixes) const;
  std::size_t count() const;  // total scalar count
  std::size_t size() const { return params_.size(); }

  void zero_grad();
  // Drops gradient buffers so has_grad() marks only tensors reached by the
  // next backward pass.
  void release_grad() {
    for (auto& kv : params_) kv.second.node().grad.clear();
  }

  const std::map<std::string, Tensor<T>>& map() const { return params_; }
  std::map<std::string, Tensor<T>>& map() { return params_; }

  // Element-wise copy into a set of another precision with identical names.
  template <typename U>
  ParameterSet<U> cast() const {
    ParameterSet<U> out;
    for (const auto& [name, t] : params_) {
      auto& dst = out.create(name, t.shape());
      for (std::size_t i = 0; i < t.numel(); ++i) dst.mutable_data()[i] = static_cast<U>(t.values()[i]);
    }
    return out;
  }

 private:
  std::map<std::string, Tensor<T>> params_;
};

template <typename T>
void init_uniform(Tensor<T>& t, double bound, Rng& rng);
template <typename T>
void init_normal(Tensor<T>& t, double stddev, Rng& rng);
template <typename T>
void init_constant(Tensor<T>& t, double value);

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Arrays are written in the given order; load returns them in file order.
void write_container(const std::string& path, const std::vector<NamedArray>& arrays);
std::vector<NamedArray> read_container(const std::string& path);

template <typename T>
std::vector<NamedArray> to_arrays(const ParameterSet<T>& params, const std::string& prefix = "");
// Copies matching arrays into params. Every parameter must be present with
// the same shape; extra arrays are ignored.
template <typename T>
void assign_arrays(ParameterSet<T>& params, const std::vector<NamedArray>& arrays, const std::string& prefix = "");

// Write to a sibling temp file, then rename over the destination.
void write_file_atomic(const std::string& path, const std::string& bytes);

}  // namespace tunein
