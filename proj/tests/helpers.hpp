#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>

#include "dyntask/tape.hpp"
#include "dyntask/tensor.hpp"

namespace testutil {

inline dyntask::Tensor random_tensor(const dyntask::Shape& s, std::uint64_t seed, double lo = -1.0,
                                     double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  dyntask::Tensor t(s);
  for (double& v : t.raw()) v = d(rng);
  return t;
}

inline double max_abs_diff(const dyntask::Tensor& a, const dyntask::Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("dyntask_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testutil
