#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tirelearn/ad.hpp"
#include "tirelearn/dataset.hpp"
#include "tirelearn/node.hpp"
#include "tirelearn/tires.hpp"

namespace tirelearn {

struct TrainConfig {
  double lambda = 0.01;      // friction-penalty weight
  double mu_fz_bar = 7000.0;  // N, friction-limit estimate used by the penalty
  int epochs = 100;
  int batch_size = 64;
  std::uint64_t seed = 1;
  double test_fraction = 0.2;
  std::size_t block_size = 200;
  double lr0 = 1e-3;
  double decay = 0.01;
  double slip_scale = 0.2;
  ExpTanhConfig exptanh;
  NodeConfig node;
};

/// Mean objective over the batch, in N^2. T is double or Var.
template <class T>
T loss_pure_t(const LearnedTire& model, std::span<const T> theta, std::span<const AxleSample> batch,
              const TrainConfig& cfg);
template <class T>
T loss_combined_t(const LearnedTire& model, std::span<const T> theta, std::span<const AxleSample> batch,
                  const TrainConfig& cfg);

double loss_pure(const LearnedTire& model, std::span<const AxleSample> batch, const TrainConfig& cfg);
double loss_combined(const LearnedTire& model, std::span<const AxleSample> batch, const TrainConfig& cfg);

/// Dispatches on the model's regime.
double loss(const LearnedTire& model, std::span<const double> theta, std::span<const AxleSample> batch,
            const TrainConfig& cfg);
ValueAndGrad loss_and_gradient(const LearnedTire& model, std::span<const double> theta,
                               std::span<const AxleSample> batch, const TrainConfig& cfg);

struct TrainResult {
  std::unique_ptr<LearnedTire> model;
  std::vector<double> loss_history;  // mean training loss per epoch
  double train_rmse = 0.0;
  double test_rmse = 0.0;
  int epochs = 0;
};

/// Untrained model of the given kind for one axle.
std::unique_ptr<LearnedTire> make_learned_model(ModelKind kind, Axle axle, const TrainConfig& cfg);

/// Fits a learned model on the training blocks of `data` with Adam and
/// reports RMSE on both splits.
TrainResult train_model(ModelKind kind, Axle axle, const Dataset& data, const TrainConfig& cfg);

/// Same, on pre-split axle samples.
TrainResult train_model(ModelKind kind, Axle axle, const std::vector<AxleSample>& train,
                        const std::vector<AxleSample>& test, const TrainConfig& cfg);

/// Force RMSE over the channels that the model's regime predicts.
double rmse(const TireModel& model, std::span<const AxleSample> samples);

// --- parametric baselines ------------------------------------------------------

struct FitConfig {
  int adam_iterations = 300;
  double lr = 0.01;
  int lm_iterations = 100;
};

struct MagicFormulaFit {
  MagicFormulaParams params;
  double loss = 0.0;  // mean squared force error, N^2
};

/// Least-squares Magic Formula fit (Adam warm-up, then Levenberg-Marquardt).
MagicFormulaFit fit_magic_formula(std::span<const AxleSample> samples, Regime regime,
                                  MagicFormulaParams initial, const FitConfig& cfg = {});

struct FialaFit {
  FialaParams lateral;
  double longitudinal_stiffness = 0.0;
  double loss = 0.0;
};

FialaFit fit_fiala(std::span<const AxleSample> samples, Regime regime, FialaParams initial,
                   double initial_long_stiffness, const FitConfig& cfg = {});

// --- evaluation ----------------------------------------------------------------

struct ModelEval {
  std::string name;
  double rmse_fx = 0.0;
  double rmse_fy = 0.0;
  double rmse = 0.0;
  std::vector<double> density;  // per bin, integrates to one
  double zero_bin_density = 0.0;
};

struct EvalReport {
  std::vector<double> bin_edges;  // bins + 1 edges
  std::vector<ModelEval> models;
  int center_bin = 0;

  /// Zero-bin density of model i over that of model j.
  double zero_bin_ratio(std::size_t i, std::size_t j) const;
  nlohmann::json to_json() const;
  void write_histogram_csv(const std::string& path) const;
};

/// Error histograms on shared bins (default 101 over +-3 sigma of the pooled
/// errors). The histogrammed error is F_y for pure models and F_tot for
/// combined ones; out-of-range errors are counted in the edge bins.
EvalReport evaluate(const std::vector<std::pair<std::string, const TireModel*>>& models,
                    std::span<const AxleSample> test, int bins = 101);

struct CurveRow {
  std::size_t curve = 0;
  Feat feat;
  double alpha = 0.0;
  double sigma = 0.0;
  double fx = 0.0;
  double fy = 0.0;
};

/// Force-vs-slip-angle curves for each feature point at fixed sigma.
std::vector<CurveRow> sweep_curves(const TireModel& model, const std::vector<Feat>& feats,
                                   const std::vector<double>& alpha_grid, double sigma = 0.0);
void write_curves_csv(const std::string& path, const std::vector<CurveRow>& rows);

/// Evenly spaced grid including both ends.
std::vector<double> linspace(double lo, double hi, int n);

}  // namespace tirelearn
