#include "kneeatt/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace kneeatt {

namespace {

struct Probe {
  double loss;
  std::uint64_t signature;
};

Probe evaluate(const LossBuilder& build) {
  Graph g;
  Var loss = build(g);
  return {loss.value()[0], g.kink_signature()};
}

}  // namespace

GradCheckReport grad_check(const std::vector<Parameter*>& params, const LossBuilder& build,
                           const GradCheckOptions& options) {
  if (options.epsilon < 1e-7 || options.epsilon > 1e-3) {
    throw std::invalid_argument("grad_check: epsilon must lie in [1e-7, 1e-3]");
  }
  for (Parameter* p : params) p->grad = Tensor::zeros(p->value.shape());

  std::uint64_t base_signature;
  {
    Graph g;
    Var loss = build(g);
    base_signature = g.kink_signature();
    g.backward(loss);
  }

  GradCheckReport report;
  std::mt19937_64 rng(options.seed);
  const double eps = options.epsilon;
  for (Parameter* p : params) {
    std::vector<std::size_t> coords(p->value.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (coords.size() > options.max_coords_per_param) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_coords_per_param);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t i : coords) {
      const double saved = p->value[i];
      p->value[i] = saved + eps;
      const Probe plus = evaluate(build);
      p->value[i] = saved - eps;
      const Probe minus = evaluate(build);
      p->value[i] = saved;
      if (plus.signature != base_signature || minus.signature != base_signature) {
        ++report.skipped;
        continue;
      }
      const double numeric = (plus.loss - minus.loss) / (2.0 * eps);
      const double analytic = p->grad[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      const double rel = std::abs(analytic - numeric) / denom;
      ++report.checked;
      if (rel >= report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst = p->name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return report;
}

}  // namespace kneeatt
