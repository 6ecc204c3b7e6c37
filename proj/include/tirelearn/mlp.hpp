#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "tirelearn/ad.hpp"

namespace tirelearn {

/// Fully connected network with tanh hidden layers and an affine output layer.
///
/// Parameters live outside the network in a flat vector so that several
/// networks can share one parameter vector. Layer l stores its weight matrix
/// row-major (n_out x n_in) followed by its bias vector.
class Mlp {
 public:
  static constexpr int kMaxWidth = 64;

  Mlp() = default;
  explicit Mlp(std::vector<int> widths);

  const std::vector<int>& widths() const { return widths_; }
  int input_size() const { return widths_.front(); }
  int output_size() const { return widths_.back(); }
  std::size_t param_count() const { return param_count_; }

  /// Glorot-uniform weights, zero biases.
  void init_glorot(std::span<double> params, std::mt19937_64& rng) const;

  /// Evaluates the network. `P` is double (fixed weights) or the same type as
  /// `T` (weights under differentiation).
  template <class T, class P>
  void forward(std::span<const P> params, std::span<const T> input, std::span<T> output) const {
    check_sizes(params.size(), input.size(), output.size());
    std::array<T, kMaxWidth> buf_a{};
    std::array<T, kMaxWidth> buf_b{};
    const T* in = input.data();
    std::size_t offset = 0;
    const std::size_t layers = widths_.size() - 1;
    for (std::size_t l = 0; l < layers; ++l) {
      const int n_in = widths_[l];
      const int n_out = widths_[l + 1];
      const bool last = l + 1 == layers;
      T* out = last ? output.data() : (l % 2 == 0 ? buf_a.data() : buf_b.data());
      const P* w = params.data() + offset;
      const P* b = w + static_cast<std::size_t>(n_in) * static_cast<std::size_t>(n_out);
      for (int j = 0; j < n_out; ++j) {
        T z = affine(w + static_cast<std::size_t>(j) * static_cast<std::size_t>(n_in), in, n_in, b[j]);
        out[j] = last ? z : tanh(z);
      }
      offset += static_cast<std::size_t>(n_in + 1) * static_cast<std::size_t>(n_out);
      in = out;
    }
  }

  template <class T, class P>
  std::vector<T> forward(std::span<const P> params, std::span<const T> input) const {
    std::vector<T> out(static_cast<std::size_t>(output_size()));
    forward<T, P>(params, input, std::span<T>(out));
    return out;
  }

  /// Offset of the output layer's bias inside this network's parameters.
  std::size_t output_bias_offset() const { return param_count_ - static_cast<std::size_t>(output_size()); }

 private:
  void check_sizes(std::size_t n_params, std::size_t n_in, std::size_t n_out) const;

  std::vector<int> widths_;
  std::size_t param_count_ = 0;
};

/// Widths for `inputs -> hidden x depth -> outputs`.
std::vector<int> mlp_widths(int inputs, int hidden, int depth, int outputs);

}  // namespace tirelearn
