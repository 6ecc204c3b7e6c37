#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tirelearn {

enum class ErrorCode {
  degenerate_velocity,
  path_singularity,
  singular_inversion,
  non_finite_value,
  dimension_mismatch,
  non_finite_loss,
  no_interior_extremum,
  degenerate_scale,
  non_finite_state,
  distillation_stall,
  diverged_training,
  infeasible_geometry,
  no_convergence,
  non_finite_prediction,
  invalid_argument,
  parse_error,
  io_error,
  config_error,
};

std::string_view to_string(ErrorCode code);

/// Exception carrying one of the toolkit's error codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace tirelearn
