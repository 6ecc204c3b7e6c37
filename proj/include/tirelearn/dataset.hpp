#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "tirelearn/tires.hpp"

namespace tirelearn {

/// One logged row: measured state, inputs, slips and estimated axle forces.
struct Sample {
  double t = 0.0;
  double r = 0.0;
  double v = 0.0;
  double beta = 0.0;
  double omega_f = 0.0;
  double omega_r = 0.0;
  double delta = 0.0;
  double tau_f = 0.0;
  double tau_r = 0.0;
  double alpha_f = 0.0;
  double alpha_r = 0.0;
  double sigma_f = 0.0;
  double sigma_r = 0.0;
  double fxf = 0.0;
  double fyf = 0.0;
  double fxr = 0.0;
  double fyr = 0.0;
  double mu_fz_bar = 0.0;
};

using Dataset = std::vector<Sample>;

/// Column order of the CSV schema.
const std::vector<std::string>& dataset_columns();

void write_dataset_csv(const std::string& path, const Dataset& data);
/// Throws ParseError naming the file and line on malformed input.
Dataset read_dataset_csv(const std::string& path);

/// Model input and measured forces of one axle.
struct AxleSample {
  TireInput<double> in;
  double fx = 0.0;
  double fy = 0.0;
};

AxleSample axle_sample(const Sample& s, Axle axle);
std::vector<AxleSample> axle_view(const Dataset& data, Axle axle);

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Contiguous blocks of `block_size` rows; a block goes to the test set when
/// it crosses a multiple of 1 / test_fraction (every fifth block for 0.2).
SplitIndices split_blocks(std::size_t n, double test_fraction = 0.2, std::size_t block_size = 200);

template <class T>
std::vector<T> gather(const std::vector<T>& v, const std::vector<std::size_t>& idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(v[i]);
  return out;
}

/// Feature standardisation fitted on the given samples.
Normalization fit_normalization(const std::vector<AxleSample>& samples, Axle axle, double force_scale,
                                double slip_scale = 0.2);

}  // namespace tirelearn
