#pragma once

#include <functional>
#include <string>
#include <vector>

#include "kneeatt/graph.hpp"

namespace kneeatt {

struct GradCheckOptions {
  double epsilon = 1e-5;
  /// Larger parameters are subsampled to this many coordinates.
  std::size_t max_coords_per_param = 48;
  std::uint64_t seed = 17;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  /// Coordinates whose +/- epsilon probes crossed a kink (relu sign flip,
  /// pooling argmax change, clamp boundary) and were excluded.
  std::size_t skipped = 0;
  std::string worst;  ///< "name[index]" of the worst coordinate
};

/// Builds the scalar loss on a fresh graph from the current parameter values.
using LossBuilder = std::function<Var(Graph&)>;

/// Compares backward() gradients with central differences
/// (f(x + eps) - f(x - eps)) / (2 eps), using the relative error
/// |a - n| / max(|a|, |n|, 1e-8).
GradCheckReport grad_check(const std::vector<Parameter*>& params, const LossBuilder& build,
                           const GradCheckOptions& options = {});

}  // namespace kneeatt
