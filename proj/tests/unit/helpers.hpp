#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>

#include "ple/numeric/autodiff.hpp"
#include "ple/numeric/param_vector.hpp"

namespace ple::test {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor t(std::move(shape));
  for (double& x : t.data()) x = n(rng);
  return t;
}

// Central differences written out directly, independent of the library's
// own finite-difference helper.
inline ParamVector central_diff(const LossFn& fn, ParamVector p, double step) {
  ParamVector g = p.zeros_like();
  for (std::size_t s = 0; s < p.num_segments(); ++s) {
    for (std::size_t i = 0; i < p[s].size(); ++i) {
      const double keep = p[s][i];
      p[s][i] = keep + step;
      const double up = evaluate_loss(fn, p);
      p[s][i] = keep - step;
      const double down = evaluate_loss(fn, p);
      p[s][i] = keep;
      g[s][i] = (up - down) / (2.0 * step);
    }
  }
  return g;
}

inline double max_rel(const ParamVector& got, const ParamVector& ref) {
  double num = 0.0, den = 0.0;
  for (std::size_t s = 0; s < ref.num_segments(); ++s) {
    for (std::size_t i = 0; i < ref[s].size(); ++i) {
      num = std::max(num, std::abs(got[s][i] - ref[s][i]));
      den = std::max(den, std::abs(ref[s][i]));
    }
  }
  return den == 0.0 ? num : num / den;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("ple_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace ple::test
