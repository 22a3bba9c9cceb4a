#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>

#include "kneeatt/tensor.hpp"

namespace testing {

inline kneeatt::Tensor random_tensor(const kneeatt::Shape& shape, std::mt19937_64& rng, double lo = -1.0,
                                     double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  kneeatt::Tensor t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = d(rng);
  return t;
}

inline double max_abs_diff(const kneeatt::Tensor& a, const kneeatt::Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("kneeatt_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing
