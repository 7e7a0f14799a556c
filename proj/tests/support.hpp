#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "fcca/cinn.hpp"
#include "fcca/params.hpp"
#include "fcca/tensor.hpp"

namespace fcca::testing {

// log|det A| by Gaussian elimination with partial pivoting.
inline double log_abs_det(std::vector<std::vector<double>> a) {
  const std::size_t n = a.size();
  double acc = 0.0;
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t pivot = c;
    for (std::size_t r = c + 1; r < n; ++r) {
      if (std::abs(a[r][c]) > std::abs(a[pivot][c])) pivot = r;
    }
    std::swap(a[c], a[pivot]);
    if (a[c][c] == 0.0) return -INFINITY;
    acc += std::log(std::abs(a[c][c]));
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = a[r][c] / a[c][c];
      for (std::size_t k = c; k < n; ++k) a[r][k] -= f * a[c][k];
    }
  }
  return acc;
}

// Central-difference Jacobian of a vector map, J[i][j] = d out_i / d in_j.
inline std::vector<std::vector<double>> numeric_jacobian(
    const std::function<std::vector<double>(const std::vector<double>&)>& f, const std::vector<double>& x,
    double h = 1e-6) {
  const std::size_t n = x.size();
  std::vector<std::vector<double>> jac(n, std::vector<double>(n));
  for (std::size_t j = 0; j < n; ++j) {
    auto hi = x, lo = x;
    hi[j] += h;
    lo[j] -= h;
    const auto fh = f(hi), fl = f(lo);
    for (std::size_t i = 0; i < n; ++i) jac[i][j] = (fh[i] - fl[i]) / (2.0 * h);
  }
  return jac;
}

inline double numeric_cinn_logdet(const CinnParams& params, std::span<const double> z, std::size_t label,
                                  double h = 1e-6) {
  const std::vector<std::size_t> labels{label};
  auto f = [&](const std::vector<double>& x) {
    const Tensor row({1, x.size()}, x);
    const FlowResult f = cinn_forward(params, row, labels);
    return std::vector<double>(f.out.values().begin(), f.out.values().end());
  };
  return log_abs_det(numeric_jacobian(f, std::vector<double>(z.begin(), z.end()), h));
}

struct GradientAgreement {
  std::size_t checked = 0;
  std::size_t agreeing = 0;
  double fraction() const { return checked ? static_cast<double>(agreeing) / static_cast<double>(checked) : 1.0; }
};

// Compares analytic gradients with central differences of `loss`, entry by
// entry. Entries where both values are below `floor` count as agreeing when
// their absolute gap is below `floor` as well.
template <ParameterSet P>
GradientAgreement compare_gradients(P params, const P& analytic, const std::function<double(const P&)>& loss,
                                    double step = 1e-5, double tolerance = 1e-4, double floor = 1e-7) {
  GradientAgreement out;
  auto pv = params.views();
  auto gv = analytic.views();
  for (std::size_t i = 0; i < pv.size(); ++i) {
    for (std::size_t j = 0; j < pv[i].size(); ++j) {
      const double keep = pv[i][j];
      pv[i][j] = keep + step;
      const double up = loss(params);
      pv[i][j] = keep - step;
      const double down = loss(params);
      pv[i][j] = keep;
      const double numeric = (up - down) / (2.0 * step);
      const double a = gv[i][j];
      const double scale = std::max(std::abs(a), std::abs(numeric));
      const bool ok = scale < floor ? std::abs(a - numeric) < floor : std::abs(a - numeric) / scale <= tolerance;
      ++out.checked;
      if (ok) ++out.agreeing;
    }
  }
  return out;
}

}  // namespace fcca::testing
