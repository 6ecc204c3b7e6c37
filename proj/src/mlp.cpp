#include "tirelearn/mlp.hpp"

#include <cmath>
#include <string>

namespace tirelearn {

Mlp::Mlp(std::vector<int> widths) : widths_(std::move(widths)) {
  if (widths_.size() < 2) throw Error(ErrorCode::invalid_argument, "an MLP needs at least two layer widths");
  for (int w : widths_) {
    if (w <= 0 || w > kMaxWidth) {
      throw Error(ErrorCode::invalid_argument, "layer width must be in [1, " + std::to_string(kMaxWidth) + "]");
    }
  }
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    param_count_ += static_cast<std::size_t>(widths_[l] + 1) * static_cast<std::size_t>(widths_[l + 1]);
  }
}

void Mlp::init_glorot(std::span<double> params, std::mt19937_64& rng) const {
  if (params.size() != param_count_) throw Error(ErrorCode::dimension_mismatch, "parameter span size");
  std::size_t offset = 0;
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    const int n_in = widths_[l];
    const int n_out = widths_[l + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(n_in + n_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    const std::size_t n_w = static_cast<std::size_t>(n_in) * static_cast<std::size_t>(n_out);
    for (std::size_t k = 0; k < n_w; ++k) params[offset + k] = dist(rng);
    for (int k = 0; k < n_out; ++k) params[offset + n_w + static_cast<std::size_t>(k)] = 0.0;
    offset += n_w + static_cast<std::size_t>(n_out);
  }
}

void Mlp::check_sizes(std::size_t n_params, std::size_t n_in, std::size_t n_out) const {
  if (widths_.empty()) throw Error(ErrorCode::dimension_mismatch, "uninitialised network");
  if (n_params != param_count_) {
    throw Error(ErrorCode::dimension_mismatch,
                "expected " + std::to_string(param_count_) + " parameters, got " + std::to_string(n_params));
  }
  if (n_in != static_cast<std::size_t>(input_size())) {
    throw Error(ErrorCode::dimension_mismatch,
                "expected input of size " + std::to_string(input_size()) + ", got " + std::to_string(n_in));
  }
  if (n_out != static_cast<std::size_t>(output_size())) {
    throw Error(ErrorCode::dimension_mismatch, "output span size");
  }
}

std::vector<int> mlp_widths(int inputs, int hidden, int depth, int outputs) {
  std::vector<int> w{inputs};
  for (int i = 0; i < depth; ++i) w.push_back(hidden);
  w.push_back(outputs);
  return w;
}

}  // namespace tirelearn
