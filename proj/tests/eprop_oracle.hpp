#pragma once

// Reference computations for the e-prop gradients: the cropped loss straight
// from the readout trace, and a literal per-synapse eligibility recursion.

#include <cmath>
#include <vector>

#include "spikehpo/snn.hpp"

namespace oracle {

using spikehpo::snn::Matrix;
using spikehpo::snn::SrnnModel;
using spikehpo::snn::Trace;

/// Cropped mean cross-entropy, computed directly from the readout trace.
inline double cropped_loss(const SrnnModel& m, const Trace& x, const Trace& targets) {
  const auto fwd = spikehpo::snn::forward(m, x);
  const auto T = fwd.y.rows();
  double loss = 0.0;
  for (auto t = T - m.t_crop; t < T; ++t) {
    double norm = 0.0;
    for (int k = 0; k < m.n_out(); ++k) norm += std::exp(fwd.y(t, k));
    for (int k = 0; k < m.n_out(); ++k) loss -= targets(t, k) * std::log(std::exp(fwd.y(t, k)) / norm);
  }
  return loss / m.t_crop;
}

/// Literal forward recursion of every eligibility trace ebar_ji[t], one
/// full matrix per step, then grad_ji = sum_t L_j[t] * ebar_ji[t].
struct UnrolledGrads {
  Matrix w_in, w_rec;
};

inline UnrolledGrads unrolled_grads(const SrnnModel& m, const Trace& x, const Trace& z, const Trace& u, const Trace& delta) {
  const int T = static_cast<int>(x.rows());
  const int nr = m.n_rec(), ni = m.n_in(), no = m.n_out();
  Matrix eps_in = Matrix::Zero(nr, ni), eps_rec = Matrix::Zero(nr, nr);
  Matrix ebar_in = Matrix::Zero(nr, ni), ebar_rec = Matrix::Zero(nr, nr);
  UnrolledGrads g{Matrix::Zero(nr, ni), Matrix::Zero(nr, nr)};
  for (int t = 0; t < T; ++t) {
    std::vector<double> psi(nr), L(nr, 0.0);
    for (int j = 0; j < nr; ++j) {
      const double h = 1.0 - std::abs(u(t, j) - m.thr) / m.thr;
      psi[j] = h > 0.0 ? m.gamma * h : 0.0;
      for (int k = 0; k < no; ++k) L[j] += m.w_out(k, j) * delta(t, k);
    }
    for (int j = 0; j < nr; ++j) {
      for (int i = 0; i < ni; ++i) {
        eps_in(j, i) = (t == 0 ? 0.0 : m.alpha * eps_in(j, i)) + x(t, i);
        ebar_in(j, i) = m.kappa * ebar_in(j, i) + psi[j] * eps_in(j, i);
        g.w_in(j, i) += L[j] * ebar_in(j, i);
      }
      for (int i = 0; i < nr; ++i) {
        eps_rec(j, i) = m.alpha * eps_rec(j, i) + (t == 0 ? 0.0 : z(t - 1, i));
        ebar_rec(j, i) = m.kappa * ebar_rec(j, i) + psi[j] * eps_rec(j, i);
        if (i != j) g.w_rec(j, i) += L[j] * ebar_rec(j, i);
      }
    }
  }
  return g;
}

}  // namespace oracle
