#include "ucf/numcore/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "ucf/error.hpp"

namespace ucf::num {

namespace {

double evaluate(const LossBuilder& loss, std::span<const Matrix> params) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const auto& p : params) vars.push_back(tape.constant(p));
  return tape.scalar(loss(tape, vars));
}

}  // namespace

GradCheckResult finite_diff_check(const LossBuilder& loss, std::span<Matrix> params, double eps) {
  if (!(eps > 0.0)) throw ContractError("finite_diff_check requires eps > 0");

  std::vector<Matrix> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& p : params) vars.push_back(tape.leaf(p));
    const Var out = loss(tape, vars);
    tape.backward(out);
    for (Var v : vars) analytic.push_back(tape.grad(v));
  }

  GradCheckResult result;
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto data = params[p].data();
    for (std::size_t e = 0; e < data.size(); ++e) {
      const double saved = data[e];
      data[e] = saved + eps;
      const double up = evaluate(loss, params);
      data[e] = saved - eps;
      const double down = evaluate(loss, params);
      data[e] = saved;

      const double fd = (up - down) / (2.0 * eps);
      const double ad = analytic[p].data()[e];
      const double err = std::abs(ad - fd) / std::max(1e-8, std::abs(ad) + std::abs(fd));
      ++result.entries_checked;
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_param = p;
        result.worst_entry = e;
      }
    }
  }
  return result;
}

}  // namespace ucf::num
