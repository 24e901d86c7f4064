#include "hvae/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hvae/rng.hpp"

namespace hvae::nn {

namespace {

double evaluate(const ScalarFn& f, const std::vector<Tensor<double>>& params) {
  Graph<double> g;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const auto& p : params) vars.push_back(g.constant(p));
  const Var out = f(g, vars);
  if (g.value(out).size() != 1) throw ShapeError("grad_check: function must be scalar-valued");
  return g.value(out)[0];
}

}  // namespace

GradCheckReport grad_check(const ScalarFn& f, const std::vector<Tensor<double>>& params, double tol,
                           const GradCheckOptions& opts) {
  Graph<double> g;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const auto& p : params) vars.push_back(g.parameter(p));
  const Var out = f(g, vars);
  g.backward(out);

  GradCheckReport report;
  Rng rng(opts.seed);
  std::vector<Tensor<double>> shifted = params;
  for (std::size_t t = 0; t < params.size(); ++t) {
    const Tensor<double> analytic = g.grad(vars[t]);
    std::vector<std::size_t> coords(params[t].size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (opts.max_coords_per_tensor > 0 && coords.size() > opts.max_coords_per_tensor) {
      // Partial Fisher-Yates: the first k entries become a uniform subset.
      for (std::size_t i = 0; i < opts.max_coords_per_tensor; ++i) {
        const std::size_t j = i + rng.uniform_int(coords.size() - i);
        std::swap(coords[i], coords[j]);
      }
      coords.resize(opts.max_coords_per_tensor);
    }
    for (const std::size_t i : coords) {
      const double base = params[t][i];
      shifted[t][i] = base + opts.eps;
      const double up = evaluate(f, shifted);
      shifted[t][i] = base - opts.eps;
      const double down = evaluate(f, shifted);
      shifted[t][i] = base;
      const double fd = (up - down) / (2.0 * opts.eps);
      const double ad = analytic[i];
      const double abs_err = std::abs(ad - fd);
      const double rel = abs_err / std::max({std::abs(ad), std::abs(fd), opts.abs_floor});
      report.max_abs_error = std::max(report.max_abs_error, abs_err);
      if (rel > report.max_rel_error || report.checked == 0) {
        report.max_rel_error = std::max(report.max_rel_error, rel);
        report.worst = std::to_string(t) + "[" + std::to_string(i) + "]";
      }
      ++report.checked;
    }
  }
  report.passed = report.max_rel_error <= tol;
  return report;
}

}  // namespace hvae::nn
