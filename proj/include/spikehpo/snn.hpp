#pragma once

// Recurrent spiking network: LIF recurrent layer, leaky non-spiking readout,
// e-prop learning. All arithmetic is in double precision.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "spikehpo/errors.hpp"
#include "spikehpo/rng.hpp"

namespace spikehpo::snn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
/// Time-major trace: row t holds one time step.
using Trace = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class ResetMechanism { subtract, zero };

inline ResetMechanism parse_reset(const std::string& s) {
  if (s == "subtract") return ResetMechanism::subtract;
  if (s == "zero") return ResetMechanism::zero;
  throw ConfigError("reset_mechanism must be 'subtract' or 'zero', got '" + s + "'");
}

inline const char* to_string(ResetMechanism r) { return r == ResetMechanism::subtract ? "subtract" : "zero"; }

struct SrnnConfig {
  int n_in = 0;
  int n_rec = 64;
  int n_out = 0;
  double threshold = 0.9;
  double tau_mem = 250e-3;
  double tau_out = 5e-3;
  double bias_out = 0.0;
  double gamma = 0.3;
  ResetMechanism reset = ResetMechanism::subtract;
  int t_crop = 1;
  double dt = 1e-3;
  /// He-normal gains for (input, recurrent, output).
  std::array<double, 3> w_init_gain{0.5, 0.1, 0.5};
};

struct SrnnModel {
  Matrix w_in;   // [n_rec x n_in]
  Matrix w_rec;  // [n_rec x n_rec], zero diagonal
  Matrix w_out;  // [n_out x n_rec]
  double b_o = 0.0;
  double thr = 1.0;
  double alpha = 0.0;  // exp(-dt / tau_mem)
  double kappa = 0.0;  // exp(-dt / tau_out)
  double gamma = 0.3;
  ResetMechanism reset = ResetMechanism::subtract;
  int t_crop = 1;
  double dt = 1e-3;

  int n_in() const { return static_cast<int>(w_in.cols()); }
  int n_rec() const { return static_cast<int>(w_rec.rows()); }
  int n_out() const { return static_cast<int>(w_out.rows()); }

  bool operator==(const SrnnModel& o) const {
    return w_in == o.w_in && w_rec == o.w_rec && w_out == o.w_out && b_o == o.b_o && thr == o.thr &&
           alpha == o.alpha && kappa == o.kappa && gamma == o.gamma && reset == o.reset && t_crop == o.t_crop &&
           dt == o.dt;
  }
};

struct NetState {
  Vector v;  // membrane potential after reset
  Vector z;  // spikes, 0 or 1
  Vector y;  // readout

  static NetState zeros(const SrnnModel& m) {
    return {Vector::Zero(m.n_rec()), Vector::Zero(m.n_rec()), Vector::Zero(m.n_out())};
  }
};

/// i.i.d. Normal(0, (gain * sqrt(2 / cols))^2).
inline Matrix he_normal_init(int rows, int cols, double gain, Rng& rng) {
  Matrix w(rows, cols);
  const double sd = gain * std::sqrt(2.0 / static_cast<double>(cols));
  // Row-major fill so the draw order does not depend on Eigen's storage.
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) w(r, c) = rng.normal(0.0, sd);
  return w;
}

inline void check_model(const SrnnModel& m) {
  if (m.w_rec.rows() != m.w_rec.cols()) throw ConfigError("W_rec must be square");
  if (m.w_in.rows() != m.w_rec.rows()) throw ConfigError("W_in rows must equal n_rec");
  if (m.w_out.cols() != m.w_rec.rows()) throw ConfigError("W_out columns must equal n_rec");
  if (!(m.thr > 0.0)) throw ConfigError("threshold must be > 0");
  if (!(m.alpha > 0.0 && m.alpha <= 1.0)) throw ConfigError("alpha must lie in (0, 1]");
  if (!(m.kappa > 0.0 && m.kappa <= 1.0)) throw ConfigError("kappa must lie in (0, 1]");
  if (m.t_crop < 1) throw ConfigError("t_crop must be >= 1");
}

inline SrnnModel make_model(const SrnnConfig& cfg, Rng& rng) {
  if (cfg.n_in < 1 || cfg.n_rec < 1 || cfg.n_out < 1) throw ConfigError("layer sizes must be positive");
  if (!(cfg.tau_mem > 0.0) || !(cfg.tau_out > 0.0) || !(cfg.dt > 0.0)) throw ConfigError("time constants must be > 0");
  for (double g : cfg.w_init_gain)
    if (g < 0.0) throw ConfigError("initialization gains must be >= 0");
  SrnnModel m;
  m.w_in = he_normal_init(cfg.n_rec, cfg.n_in, cfg.w_init_gain[0], rng);
  m.w_rec = he_normal_init(cfg.n_rec, cfg.n_rec, cfg.w_init_gain[1], rng);
  m.w_rec.diagonal().setZero();
  m.w_out = he_normal_init(cfg.n_out, cfg.n_rec, cfg.w_init_gain[2], rng);
  m.b_o = cfg.bias_out;
  m.thr = cfg.threshold;
  m.alpha = std::exp(-cfg.dt / cfg.tau_mem);
  m.kappa = std::exp(-cfg.dt / cfg.tau_out);
  m.gamma = cfg.gamma;
  m.reset = cfg.reset;
  m.t_crop = cfg.t_crop;
  m.dt = cfg.dt;
  check_model(m);
  return m;
}

/// Pre-reset potential u = alpha*v + W_in*x + W_rec*z.
template <class XVec>
Vector membrane_input(const SrnnModel& m, const NetState& s, const XVec& x_t) {
  return m.alpha * s.v + m.w_in * x_t + m.w_rec * s.z;
}

/// Threshold then reset within the same step.
inline void spike_and_reset(const SrnnModel& m, const Vector& u, NetState& next) {
  next.z = (u.array() >= m.thr).cast<double>().matrix();
  if (m.reset == ResetMechanism::subtract)
    next.v = u - m.thr * next.z;
  else
    next.v = (next.z.array() > 0.0).select(0.0, u.array()).matrix();
}

/// One LIF update; the readout of `s` is carried over unchanged.
template <class XVec>
NetState lif_step(const SrnnModel& m, const NetState& s, const XVec& x_t) {
  NetState next;
  const Vector u = membrane_input(m, s, x_t);
  spike_and_reset(m, u, next);
  next.y = s.y;
  return next;
}

/// y' = kappa*y + W_out*z + b_o.
inline Vector readout_step(const SrnnModel& m, const NetState& s) {
  return (m.kappa * s.y + m.w_out * s.z).array() + m.b_o;
}

/// Triangular surrogate derivative of the spike function.
inline double pseudo_deriv(const SrnnModel& m, double v) {
  return m.gamma * std::max(0.0, 1.0 - std::abs(v - m.thr) / m.thr);
}

struct ForwardTrace {
  Trace y;  // [T x n_out]
  Trace z;  // [T x n_rec]
  Trace v;  // [T x n_rec], after reset
  Trace u;  // [T x n_rec], before reset; drives spikes and the surrogate
};

/// Runs T steps from the zero state. `x` is [T x n_in].
inline ForwardTrace forward(const SrnnModel& m, const Trace& x) {
  if (x.rows() < 1) throw ConfigError("input must have at least one time step");
  if (x.cols() != m.n_in()) throw ConfigError("input width does not match n_in");
  const auto T = x.rows();
  ForwardTrace out{Trace(T, m.n_out()), Trace(T, m.n_rec()), Trace(T, m.n_rec()), Trace(T, m.n_rec())};
  NetState s = NetState::zeros(m);
  for (Eigen::Index t = 0; t < T; ++t) {
    const Vector u = membrane_input(m, s, x.row(t).transpose());
    NetState next;
    spike_and_reset(m, u, next);
    next.y = s.y;
    next.y = readout_step(m, next);
    if (!u.allFinite() || !next.y.allFinite())
      throw NumericError("non-finite activation at time step " + std::to_string(t));
    out.u.row(t) = u.transpose();
    out.v.row(t) = next.v.transpose();
    out.z.row(t) = next.z.transpose();
    out.y.row(t) = next.y.transpose();
    s = std::move(next);
  }
  return out;
}

/// Row-wise softmax, max-shifted.
inline Trace softmax_rows(const Trace& y) {
  Trace p(y.rows(), y.cols());
  for (Eigen::Index t = 0; t < y.rows(); ++t) {
    const double mx = y.row(t).maxCoeff();
    p.row(t) = (y.row(t).array() - mx).exp();
    p.row(t) /= p.row(t).sum();
  }
  return p;
}

/// Output error: (softmax(y[t]) - target[t]) / t_crop on the last t_crop
/// steps, zero elsewhere. `targets` is [T x n_out].
inline Trace output_errors(const SrnnModel& m, const ForwardTrace& fwd, const Trace& targets) {
  const auto T = fwd.y.rows();
  if (m.t_crop > T) throw ConfigError("t_crop (" + std::to_string(m.t_crop) + ") exceeds sequence length");
  Trace delta = Trace::Zero(T, m.n_out());
  const Trace pi = softmax_rows(fwd.y);
  for (Eigen::Index t = T - m.t_crop; t < T; ++t)
    delta.row(t) = (pi.row(t) - targets.row(t)) / static_cast<double>(m.t_crop);
  return delta;
}

/// Forward-filtered quantities of the e-prop recursions (per time step).
struct EpropTraces {
  Trace eps_in;   // alpha-filtered input presynaptic trace [T x n_in]
  Trace eps_rec;  // alpha-filtered recurrent presynaptic trace [T x n_rec]
  Trace psi;      // surrogate derivative per neuron [T x n_rec]
  Trace zbar;     // kappa-filtered spikes [T x n_rec]
};

/// eps_in[t] = alpha*eps_in[t-1] + x[t]; eps_rec[t] = alpha*eps_rec[t-1] + z[t-1];
/// psi[t] = pseudo_deriv(u[t]); zbar[t] = kappa*zbar[t-1] + z[t].
inline EpropTraces compute_traces(const SrnnModel& m, const Trace& x, const ForwardTrace& fwd) {
  const auto T = x.rows();
  EpropTraces tr{Trace(T, m.n_in()), Trace(T, m.n_rec()), Trace(T, m.n_rec()), Trace(T, m.n_rec())};
  for (Eigen::Index t = 0; t < T; ++t) {
    if (t == 0) {
      tr.eps_in.row(0) = x.row(0);
      tr.eps_rec.row(0).setZero();
      tr.zbar.row(0) = fwd.z.row(0);
    } else {
      tr.eps_in.row(t) = m.alpha * tr.eps_in.row(t - 1) + x.row(t);
      tr.eps_rec.row(t) = m.alpha * tr.eps_rec.row(t - 1) + fwd.z.row(t - 1);
      tr.zbar.row(t) = m.kappa * tr.zbar.row(t - 1) + fwd.z.row(t);
    }
    for (int j = 0; j < m.n_rec(); ++j) tr.psi(t, j) = pseudo_deriv(m, fwd.u(t, j));
  }
  return tr;
}

struct Gradients {
  Matrix w_in;
  Matrix w_rec;
  Matrix w_out;
  double b_o = 0.0;

  static Gradients zeros_like(const SrnnModel& m) {
    return {Matrix::Zero(m.n_rec(), m.n_in()), Matrix::Zero(m.n_rec(), m.n_rec()),
            Matrix::Zero(m.n_out(), m.n_rec()), 0.0};
  }

  Gradients& operator+=(const Gradients& o) {
    w_in += o.w_in;
    w_rec += o.w_rec;
    w_out += o.w_out;
    b_o += o.b_o;
    return *this;
  }

  Gradients& operator*=(double s) {
    w_in *= s;
    w_rec *= s;
    w_out *= s;
    b_o *= s;
    return *this;
  }
};

/// e-prop gradients from a given output error `delta` [T x n_out].
///
/// With learning signal L[t] = W_out^T delta[t] and eligibility traces
/// ebar_ji[t] = kappa*ebar_ji[t-1] + psi_j[t]*eps_i[t], the gradient
/// sum_t L_j[t]*ebar_ji[t] is evaluated as sum_s psi_j[s]*Lf_j[s]*eps_i[s],
/// where Lf[s] = L[s] + kappa*Lf[s+1] is the backward-filtered signal.
inline Gradients eprop_grads_from_errors(const SrnnModel& m, const EpropTraces& tr, const Trace& delta) {
  const auto T = delta.rows();
  Trace lf(T, m.n_rec());
  Eigen::RowVectorXd carry = Eigen::RowVectorXd::Zero(m.n_rec());
  for (Eigen::Index t = T - 1; t >= 0; --t) {
    carry = delta.row(t) * m.w_out + m.kappa * carry;
    lf.row(t) = carry;
  }
  const Trace a = tr.psi.cwiseProduct(lf);

  Gradients g;
  g.w_in = a.transpose() * tr.eps_in;
  g.w_rec = a.transpose() * tr.eps_rec;
  g.w_rec.diagonal().setZero();
  g.w_out = delta.transpose() * tr.zbar;
  g.b_o = delta.sum();
  return g;
}

/// Gradients of the cropped cross-entropy for one sample with per-step
/// one-hot `targets` [T x n_out].
inline Gradients eprop_grads(const SrnnModel& m, const Trace& x, const ForwardTrace& fwd, const Trace& targets) {
  const Trace delta = output_errors(m, fwd, targets);
  return eprop_grads_from_errors(m, compute_traces(m, x, fwd), delta);
}

struct AdamMoments {
  Matrix m;
  Matrix v;
};

struct AdamState {
  std::array<AdamMoments, 3> layers;  // input, recurrent, output
  double m_b = 0.0;
  double v_b = 0.0;
  long step = 0;
};

struct AdamConfig {
  double lr = 1e-3;
  /// Learning-rate factors for (input, recurrent, output).
  std::array<double, 3> layer_factor{0.05, 0.05, 1.0};
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam on one tensor; `t` is the 1-based step count.
inline void adam_update(Matrix& p, const Matrix& g, AdamMoments& mom, double lr, long t, const AdamConfig& cfg) {
  if (mom.m.size() == 0) {
    mom.m = Matrix::Zero(p.rows(), p.cols());
    mom.v = Matrix::Zero(p.rows(), p.cols());
  }
  mom.m = cfg.beta1 * mom.m + (1.0 - cfg.beta1) * g;
  mom.v = cfg.beta2 * mom.v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  p.array() -= lr * (mom.m.array() / c1) / ((mom.v.array() / c2).sqrt() + cfg.eps);
}

inline void adam_step(SrnnModel& model, const Gradients& g, const AdamConfig& cfg, AdamState& state) {
  ++state.step;
  adam_update(model.w_in, g.w_in, state.layers[0], cfg.lr * cfg.layer_factor[0], state.step, cfg);
  adam_update(model.w_rec, g.w_rec, state.layers[1], cfg.lr * cfg.layer_factor[1], state.step, cfg);
  model.w_rec.diagonal().setZero();
  adam_update(model.w_out, g.w_out, state.layers[2], cfg.lr * cfg.layer_factor[2], state.step, cfg);

  const double lr_b = cfg.lr * cfg.layer_factor[2];
  state.m_b = cfg.beta1 * state.m_b + (1.0 - cfg.beta1) * g.b_o;
  state.v_b = cfg.beta2 * state.v_b + (1.0 - cfg.beta2) * g.b_o * g.b_o;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  model.b_o -= lr_b * (state.m_b / c1) / (std::sqrt(state.v_b / c2) + cfg.eps);
}

}  // namespace spikehpo::snn
