#pragma once

#include <functional>
#include <string>
#include <vector>

#include "amr/graph.hpp"

namespace amr {

struct GradcheckResult {
  double max_rel_err = 0.0;
  std::string worst_param;
  int worst_index = -1;
  bool passed(double tol) const { return max_rel_err <= tol; }
};

// Compares analytic gradients against central finite differences for every
// component of every listed parameter. `build` must construct the forward
// pass from the parameters' current values and return a scalar loss node.
// Relative error per component: |ga-gn| / max(|ga|, |gn|, 1e-6).
inline GradcheckResult gradcheck_params(
    const std::function<Var(Graph<double>&)>& build,
    const std::vector<Parameter<double>*>& params, double step = 1e-5) {
  for (auto* p : params) p->zero_grad();
  {
    Graph<double> g(true);
    g.set_debug_checks(true);
    Var loss = build(g);
    g.backward(loss);
  }
  auto eval_loss = [&]() {
    Graph<double> g(false);
    Var loss = build(g);
    return g.val(loss).v[0];
  };

  GradcheckResult res;
  for (auto* p : params) {
    for (int64_t i = 0; i < p->value.size(); ++i) {
      const double orig = p->value.v[i];
      p->value.v[i] = orig + step;
      const double fp = eval_loss();
      p->value.v[i] = orig - step;
      const double fm = eval_loss();
      p->value.v[i] = orig;
      const double gn = (fp - fm) / (2.0 * step);
      const double ga = p->grad.v[i];
      const double denom = std::max({std::fabs(ga), std::fabs(gn), 1e-6});
      const double rel = std::fabs(ga - gn) / denom;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_param = p->name;
        res.worst_index = (int)i;
      }
    }
  }
  return res;
}

// Single-tensor convenience: checks d(loss)/d(x) for f(graph, x) -> scalar.
inline GradcheckResult gradcheck(
    const std::function<Var(Graph<double>&, Var)>& f,
    const TensorData<double>& x0, double step = 1e-5) {
  Parameter<double> x("x", x0);
  auto build = [&](Graph<double>& g) { return f(g, g.leaf(x)); };
  return gradcheck_params(build, {&x}, step);
}

}  // namespace amr
