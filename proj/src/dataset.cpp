#include "tirelearn/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace tirelearn {

namespace {

constexpr std::size_t kColumns = 18;

std::array<double*, kColumns> fields(Sample& s) {
  return {&s.t,       &s.r,       &s.v,       &s.beta,    &s.omega_f, &s.omega_r, &s.delta, &s.tau_f, &s.tau_r,
          &s.alpha_f, &s.alpha_r, &s.sigma_f, &s.sigma_r, &s.fxf,     &s.fyf,     &s.fxr,   &s.fyr,   &s.mu_fz_bar};
}

}  // namespace

const std::vector<std::string>& dataset_columns() {
  static const std::vector<std::string> cols{"t",       "r",       "V",       "beta",    "omega_f", "omega_r",
                                             "delta",   "tau_f",   "tau_r",   "alpha_f", "alpha_r", "sigma_f",
                                             "sigma_r", "fxf",     "fyf",     "fxr",     "fyr",     "mu_fz_bar"};
  return cols;
}

void write_dataset_csv(const std::string& path, const Dataset& data) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::io_error, "cannot open " + path + " for writing");
  const auto& cols = dataset_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << '\n';
  char buf[32];
  for (Sample s : data) {
    const auto f = fields(s);
    for (std::size_t i = 0; i < kColumns; ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", *f[i]);
      out << (i ? "," : "") << buf;
    }
    out << '\n';
  }
  if (!out) throw Error(ErrorCode::io_error, "write failed for " + path);
}

Dataset read_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io_error, "cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::parse_error, path + ":1: missing header");
  {
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> header;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
    if (header != dataset_columns()) throw Error(ErrorCode::parse_error, path + ":1: unexpected header");
  }
  Dataset data;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    Sample s;
    auto f = fields(s);
    std::size_t pos = 0;
    for (std::size_t i = 0; i < kColumns; ++i) {
      const std::size_t end = line.find(',', pos);
      const bool last = i + 1 == kColumns;
      if ((end == std::string::npos) != last) {
        throw Error(ErrorCode::parse_error, path + ":" + std::to_string(line_no) + ": expected " +
                                                std::to_string(kColumns) + " columns");
      }
      const std::string cell = line.substr(pos, last ? std::string::npos : end - pos);
      char* stop = nullptr;
      *f[i] = std::strtod(cell.c_str(), &stop);
      if (cell.empty() || *stop != '\0' || !std::isfinite(*f[i])) {
        throw Error(ErrorCode::parse_error, path + ":" + std::to_string(line_no) + ": bad value '" + cell +
                                                "' in column " + dataset_columns()[i]);
      }
      pos = end + 1;
    }
    data.push_back(s);
  }
  return data;
}

AxleSample axle_sample(const Sample& s, Axle axle) {
  AxleSample a;
  a.in.feat = Feat{axle, s.r, s.v, s.beta, s.mu_fz_bar};
  if (axle == Axle::front) {
    a.in.alpha = s.alpha_f;
    a.in.sigma = s.sigma_f;
    a.fx = s.fxf;
    a.fy = s.fyf;
  } else {
    a.in.alpha = s.alpha_r;
    a.in.sigma = s.sigma_r;
    a.fx = s.fxr;
    a.fy = s.fyr;
  }
  return a;
}

std::vector<AxleSample> axle_view(const Dataset& data, Axle axle) {
  std::vector<AxleSample> out;
  out.reserve(data.size());
  for (const Sample& s : data) out.push_back(axle_sample(s, axle));
  return out;
}

SplitIndices split_blocks(std::size_t n, double test_fraction, std::size_t block_size) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw Error(ErrorCode::invalid_argument, "test fraction must lie in (0, 1)");
  }
  if (block_size == 0) throw Error(ErrorCode::invalid_argument, "block size must be positive");
  SplitIndices split;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t b = i / block_size;
    const bool test = std::floor(static_cast<double>(b + 1) * test_fraction) >
                      std::floor(static_cast<double>(b) * test_fraction);
    (test ? split.test : split.train).push_back(i);
  }
  return split;
}

Normalization fit_normalization(const std::vector<AxleSample>& samples, Axle axle, double force_scale,
                                double slip_scale) {
  Normalization n = Normalization::identity(axle, force_scale);
  n.slip_scale = slip_scale;
  if (samples.empty()) return n;
  const int k = feat_size(axle);
  const double count = static_cast<double>(samples.size());
  for (int i = 0; i < k; ++i) {
    double mean = 0.0;
    for (const AxleSample& s : samples) mean += s.in.feat[i];
    mean /= count;
    double var = 0.0;
    for (const AxleSample& s : samples) var += (s.in.feat[i] - mean) * (s.in.feat[i] - mean);
    const double sd = std::sqrt(var / count);
    n.feat_shift[static_cast<std::size_t>(i)] = mean;
    n.feat_scale[static_cast<std::size_t>(i)] = sd > 1e-9 * std::max(1.0, std::abs(mean)) ? sd : 1.0;
  }
  return n;
}

}  // namespace tirelearn
