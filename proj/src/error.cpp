#include "tirelearn/error.hpp"

namespace tirelearn {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::degenerate_velocity: return "DegenerateVelocity";
    case ErrorCode::path_singularity: return "PathSingularity";
    case ErrorCode::singular_inversion: return "SingularInversion";
    case ErrorCode::non_finite_value: return "NonFiniteValue";
    case ErrorCode::dimension_mismatch: return "DimensionMismatch";
    case ErrorCode::non_finite_loss: return "NonFiniteLoss";
    case ErrorCode::no_interior_extremum: return "NoInteriorExtremum";
    case ErrorCode::degenerate_scale: return "DegenerateScale";
    case ErrorCode::non_finite_state: return "NonFiniteState";
    case ErrorCode::distillation_stall: return "DistillationStall";
    case ErrorCode::diverged_training: return "DivergedTraining";
    case ErrorCode::infeasible_geometry: return "InfeasibleGeometry";
    case ErrorCode::no_convergence: return "NoConvergence";
    case ErrorCode::non_finite_prediction: return "NonFinitePrediction";
    case ErrorCode::invalid_argument: return "InvalidArgument";
    case ErrorCode::parse_error: return "ParseError";
    case ErrorCode::io_error: return "IoError";
    case ErrorCode::config_error: return "ConfigError";
  }
  return "Unknown";
}

}  // namespace tirelearn
