#include "hd2/gradcheck.hpp"

#include <cmath>

namespace hd2::diffcore {

double grad_check(const std::function<Tensor()>& f,
                  const std::vector<Parameter*>& params, double eps,
                  bool corrupt_analytic) {
  if (!(eps >= 1e-7 && eps <= 1e-3))
    throw DomainError("grad_check eps must lie in [1e-7, 1e-3]");

  auto eval = [&f]() {
    Tensor out = f();
    double v = out.item();
    if (!std::isfinite(v))
      throw NumericError("grad_check: function value is non-finite");
    return out;
  };

  Tensor loss = eval();
  loss.backward();

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (Parameter* p : params) {
    if (!p->value.requires_grad())
      throw DomainError("grad_check parameter '" + p->name +
                        "' does not track gradients");
    analytic.push_back(p->value.grad());
  }
  if (corrupt_analytic && !analytic.empty() && !analytic[0].empty())
    analytic[0][0] += 1.0;

  NoGradGuard forward_only;
  double worst = 0.0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& v = params[pi]->value;
    double* raw = v.data();
    for (int64_t i = 0; i < v.numel(); ++i) {
      double saved = raw[i];
      raw[i] = saved + eps;
      double up = eval().item();
      raw[i] = saved - eps;
      double down = eval().item();
      raw[i] = saved;
      double fd = (up - down) / (2.0 * eps);
      double a = analytic[pi][i];
      double rel = std::fabs(a - fd) / std::max(1.0, std::fabs(a));
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace hd2::diffcore
