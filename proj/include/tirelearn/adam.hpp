#pragma once

#include <span>
#include <vector>

namespace tirelearn {

struct AdamConfig {
  double lr0 = 1e-3;
  double decay = 0.01;  // lr_epoch = lr0 * exp(-decay * epoch)
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam optimizer state with per-epoch exponential learning-rate decay.
class AdamState {
 public:
  AdamState(std::size_t dim, AdamConfig config = {});

  /// One bias-corrected Adam update of theta in place.
  void step(std::span<double> theta, std::span<const double> gradient, int epoch);

  double learning_rate(int epoch) const;
  long steps() const { return t_; }
  const std::vector<double>& first_moment() const { return m_; }
  const std::vector<double>& second_moment() const { return v_; }
  const AdamConfig& config() const { return config_; }

 private:
  AdamConfig config_;
  std::vector<double> m_;
  std::vector<double> v_;
  long t_ = 0;
};

}  // namespace tirelearn
