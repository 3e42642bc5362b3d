#pragma once

// Proximity operators and inner solvers for the alternating updates:
// one-sided soft thresholding, the log-det transform step, and a projected
// Newton solver for the coupled coefficient step.

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "dctl/conv.hpp"
#include "dctl/errors.hpp"

namespace dctl {

/// argmin_{z >= 0} (w/2)(z - u)^2 + beta * z  ==  max(u - beta / w, 0).
inline double prox_nonneg_l1(double u, double beta, double weight) {
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw std::invalid_argument("prox_nonneg_l1: beta must be finite and >= 0");
  if (!(weight > 0.0) || !std::isfinite(weight)) throw std::invalid_argument("prox_nonneg_l1: weight must be finite and > 0");
  return std::max(u - beta / weight, 0.0);
}

/// Sum of log singular values; -inf when the matrix is singular.
inline double log_abs_det(const Matrix& t) {
  Eigen::JacobiSVD<Matrix> svd(t);
  const Vector s = svd.singularValues();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (!(s(i) > 0.0)) return -std::numeric_limits<double>::infinity();
    acc += std::log(s(i));
  }
  return acc;
}

/// prox of X -> -lambda * sum_i log sigma_i(X): every singular value s of y
/// is replaced by the positive root of s'^2 - s s' - lambda = 0.
inline Matrix prox_logdet_svd(const Matrix& y, double lambda) {
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw std::invalid_argument("prox_logdet_svd: lambda must be finite and > 0");
  detail::require(y.rows() == y.cols(), "prox_logdet_svd: input must be square");
  if (!y.allFinite()) throw numerical_error("prox_logdet_svd: non-finite input");
  Eigen::JacobiSVD<Matrix> svd(y, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vector s = svd.singularValues();
  Vector shrunk(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) shrunk(i) = 0.5 * (s(i) + std::sqrt(s(i) * s(i) + 4.0 * lambda));
  return svd.matrixU() * shrunk.asDiagonal() * svd.matrixV().transpose();
}

namespace detail {

/// Lower Cholesky factor of a symmetric positive definite W, with bounded
/// diagonal jitter on failure.
inline Eigen::LLT<Matrix> factor_spd(const Matrix& w) {
  Eigen::LLT<Matrix> llt(w);
  if (llt.info() == Eigen::Success) return llt;
  const double base = 1e-10 * std::abs(w.trace()) / static_cast<double>(std::max<Eigen::Index>(w.rows(), 1));
  double jitter = base > 0.0 ? base : 1e-10;
  for (int attempt = 0; attempt < 3; ++attempt, jitter *= 10.0) {
    llt.compute(w + jitter * Matrix::Identity(w.rows(), w.cols()));
    if (llt.info() == Eigen::Success) return llt;
  }
  throw numerical_error("Cholesky factorization failed: matrix is not positive definite");
}

}  // namespace detail

/// Global minimizer of  1/2 tr(T^T W T) - <G, T> - lambda * sum_i log sigma_i(T)
/// for symmetric positive definite W. With W = L L^T and Y = L^{-1} G the
/// problem becomes prox_logdet(Y) in the variable L^T T.
inline Matrix solve_logdet_quadratic(const Matrix& w, const Matrix& g, double lambda) {
  detail::require(w.rows() == w.cols() && g.rows() == w.rows() && g.cols() == w.cols(),
                  "solve_logdet_quadratic: shape mismatch");
  if (!w.allFinite() || !g.allFinite()) throw numerical_error("solve_logdet_quadratic: non-finite input");
  const auto llt = detail::factor_spd(w);
  const Matrix y = llt.matrixL().solve(g);
  const Matrix tt = prox_logdet_svd(y, lambda);
  Matrix t = llt.matrixU().solve(tt);
  if (!t.allFinite()) throw numerical_error("solve_logdet_quadratic: non-finite result");
  return t;
}

struct TransformUpdateInputs {
  Matrix gram;    // sum_m Zin_m^T Zin_m
  Matrix cross;   // sum_m Zin_m^T Zout_m
  Matrix anchor;  // current transform
  double mu = 0.0;
  double lambda = 1.0;
  double gamma1 = 1.0;  // +inf disables the proximal anchor
};

namespace detail {

inline void validate(const TransformUpdateInputs& in) {
  const Eigen::Index k = in.gram.rows();
  require(k > 0 && in.gram.cols() == k, "update_transform: gram must be square and non-empty");
  require(in.cross.rows() == k && in.cross.cols() == k, "update_transform: cross shape mismatch");
  require(in.anchor.rows() == k && in.anchor.cols() == k, "update_transform: anchor shape mismatch");
  require(in.mu >= 0.0 && std::isfinite(in.mu), "update_transform: mu must be finite and >= 0");
  require(in.lambda > 0.0 && std::isfinite(in.lambda), "update_transform: lambda must be finite and > 0");
  require(in.gamma1 > 0.0, "update_transform: gamma1 must be > 0");
  const double asym = (in.gram - in.gram.transpose()).cwiseAbs().maxCoeff();
  require(asym <= 1e-9 * std::max(1.0, in.gram.cwiseAbs().maxCoeff()), "update_transform: gram must be symmetric");
}

}  // namespace detail

/// W = gram + (1/gamma1 + 2 mu) I and G = cross + anchor / gamma1.
inline std::pair<Matrix, Matrix> transform_quadratic(const TransformUpdateInputs& in) {
  const double inv_g = 1.0 / in.gamma1;
  const Eigen::Index k = in.gram.rows();
  Matrix w = in.gram + (inv_g + 2.0 * in.mu) * Matrix::Identity(k, k);
  Matrix g = in.cross + inv_g * in.anchor;
  return {std::move(w), std::move(g)};
}

/// Exact proximal transform step: minimizes
///   1/2 sum_m ||Zin_m T - Zout_m||^2 + mu ||T||^2 - lambda logdet(T) + 1/(2 gamma1) ||T - anchor||^2
/// given its sufficient statistics.
inline Matrix update_transform(const TransformUpdateInputs& in) {
  detail::validate(in);
  const auto [w, g] = transform_quadratic(in);
  return solve_logdet_quadratic(w, g, in.lambda);
}

/// The objective update_transform minimizes, up to a T-independent constant.
inline double transform_surrogate_value(const TransformUpdateInputs& in, const Matrix& t) {
  const auto [w, g] = transform_quadratic(in);
  const double ld = log_abs_det(t);
  if (!std::isfinite(ld)) return std::numeric_limits<double>::infinity();
  return 0.5 * (t.transpose() * w * t).trace() - (g.array() * t.array()).sum() - in.lambda * ld;
}

/// Sufficient statistics of a transform step where every channel k sees its
/// own input operator (layers after the first): the data term is
///   sum_k 1/2 t_k^T grams[k] t_k - <cross, T> + const.
struct ChannelwiseTransformInputs {
  std::vector<Matrix> grams;  // per channel: sum_m Zin_{m,k}^T Zin_{m,k}
  Matrix cross;               // column k: sum_m Zin_{m,k}^T zout_{m,k}
  Matrix anchor;
  double mu = 0.0;
  double lambda = 1.0;
  double gamma1 = 1.0;
};

/// Value of  sum_k 1/2 t_k^T W_k t_k - <G, T> - lambda logdet(T)  with the
/// same W_k, G conventions as transform_quadratic.
inline double transform_surrogate_value(const ChannelwiseTransformInputs& in, const Matrix& t) {
  const double inv_g = 1.0 / in.gamma1;
  const double ld = log_abs_det(t);
  if (!std::isfinite(ld)) return std::numeric_limits<double>::infinity();
  double acc = 0.0;
  for (Eigen::Index k = 0; k < t.cols(); ++k) {
    const auto tk = t.col(k);
    acc += 0.5 * (tk.dot(in.grams[static_cast<std::size_t>(k)] * tk) + (inv_g + 2.0 * in.mu) * tk.squaredNorm());
  }
  acc -= (in.cross.array() * t.array()).sum() + inv_g * (in.anchor.array() * t.array()).sum();
  return acc - in.lambda * ld;
}

/// Transform step when channels have distinct Gram matrices. The quadratic is
/// majorized at the anchor by a single W_bar = mean_k W_k + delta I with
/// delta = max_k lambda_max(W_k - mean), which dominates every W_k, and the
/// majorizer plus the log-det term is minimized in closed form. When all W_k
/// coincide (delta = 0) this is the exact proximal step.
inline Matrix update_transform_channelwise(const ChannelwiseTransformInputs& in) {
  const Eigen::Index k = in.anchor.rows();
  detail::require(k > 0 && in.anchor.cols() == k, "update_transform_channelwise: anchor must be square");
  detail::require(static_cast<Eigen::Index>(in.grams.size()) == k, "update_transform_channelwise: need one gram per channel");
  detail::require(in.cross.rows() == k && in.cross.cols() == k, "update_transform_channelwise: cross shape mismatch");
  detail::require(in.mu >= 0.0 && std::isfinite(in.mu), "update_transform_channelwise: mu must be finite and >= 0");
  detail::require(in.lambda > 0.0 && std::isfinite(in.lambda), "update_transform_channelwise: lambda must be finite and > 0");
  detail::require(in.gamma1 > 0.0, "update_transform_channelwise: gamma1 must be > 0");
  const double inv_g = 1.0 / in.gamma1;
  const Matrix id = Matrix::Identity(k, k);

  Matrix mean = Matrix::Zero(k, k);
  for (const auto& g : in.grams) {
    detail::require(g.rows() == k && g.cols() == k, "update_transform_channelwise: gram shape mismatch");
    mean += g;
  }
  mean /= static_cast<double>(k);
  double delta = 0.0;
  for (const auto& g : in.grams) {
    const Matrix diff = 0.5 * ((g - mean) + (g - mean).transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> es(diff, Eigen::EigenvaluesOnly);
    delta = std::max(delta, es.eigenvalues().maxCoeff());
  }
  const Matrix w_bar = mean + (delta + inv_g + 2.0 * in.mu) * id;

  // gradient of the smooth part at the anchor
  Matrix grad(k, k);
  for (Eigen::Index c = 0; c < k; ++c)
    grad.col(c) = in.grams[static_cast<std::size_t>(c)] * in.anchor.col(c) + (inv_g + 2.0 * in.mu) * in.anchor.col(c) -
                  in.cross.col(c) - inv_g * in.anchor.col(c);
  const Matrix g = w_bar * in.anchor - grad;
  return solve_logdet_quadratic(w_bar, g, in.lambda);
}

// ---------------------------------------------------------------------------
// Coefficient step.

struct NewtonSettings {
  int max_iters = 50;
  double grad_tol = 1e-8;
  double armijo_c = 1e-4;
  double backtrack_factor = 0.5;
  double active_set_eps = 1e-10;
};

/// Everything the coefficient step of one layer depends on. For every sample m:
///   1/(2 gamma2) ||Z_m - anchor_m||^2 + 1/2 ||data_m - Z_m||^2
///   + 1/2 ||multichannel_forward(Z_m, next_bank) - next_target_m||^2   (when next_bank is set)
///   + beta * sum(Z_m) + indicator(Z_m >= 0)
struct CoefficientProblem {
  std::vector<ChannelBlock> data;
  std::vector<ChannelBlock> anchor;
  std::optional<KernelBank> next_bank;
  std::vector<ChannelBlock> next_target;
  double beta = 0.0;
  double gamma2 = 1.0;
};

namespace detail {

inline void validate(const CoefficientProblem& p) {
  require(!p.data.empty(), "coefficient problem: no samples");
  require(p.anchor.size() == p.data.size(), "coefficient problem: anchor count mismatch");
  require(p.beta >= 0.0 && std::isfinite(p.beta), "coefficient problem: beta must be finite and >= 0");
  require(p.gamma2 > 0.0 && std::isfinite(p.gamma2), "coefficient problem: gamma2 must be finite and > 0");
  const Eigen::Index n = p.data.front().rows(), k = p.data.front().cols();
  for (std::size_t m = 0; m < p.data.size(); ++m) {
    require(p.data[m].rows() == n && p.data[m].cols() == k, "coefficient problem: data block shape mismatch");
    require(p.anchor[m].rows() == n && p.anchor[m].cols() == k, "coefficient problem: anchor block shape mismatch");
  }
  if (p.next_bank) {
    require(p.next_bank->size() == k, "coefficient problem: next bank channel mismatch");
    require(p.next_target.size() == p.data.size(), "coefficient problem: next target count mismatch");
    for (const auto& y : p.next_target)
      require(y.rows() == n && y.cols() == k, "coefficient problem: next target shape mismatch");
  }
}

}  // namespace detail

inline double coefficient_objective(const CoefficientProblem& p, const std::vector<ChannelBlock>& z) {
  detail::validate(p);
  detail::require(z.size() == p.data.size(), "coefficient_objective: sample count mismatch");
  double acc = 0.0;
  for (std::size_t m = 0; m < z.size(); ++m) {
    if ((z[m].array() < 0.0).any()) return std::numeric_limits<double>::infinity();
    acc += 0.5 / p.gamma2 * (z[m] - p.anchor[m]).squaredNorm();
    acc += 0.5 * (p.data[m] - z[m]).squaredNorm();
    if (p.next_bank) acc += 0.5 * (multichannel_forward(z[m], *p.next_bank) - p.next_target[m]).squaredNorm();
    acc += p.beta * z[m].sum();
  }
  return acc;
}

/// Gradient of the smooth part (the beta term is linear on the feasible set
/// and included here).
inline std::vector<ChannelBlock> coefficient_gradient(const CoefficientProblem& p, const std::vector<ChannelBlock>& z) {
  detail::validate(p);
  detail::require(z.size() == p.data.size(), "coefficient_gradient: sample count mismatch");
  std::vector<ChannelBlock> grad(z.size());
  for (std::size_t m = 0; m < z.size(); ++m) {
    ChannelBlock g = (z[m] - p.anchor[m]) / p.gamma2 + (z[m] - p.data[m]);
    g.array() += p.beta;
    if (p.next_bank) {
      const ChannelBlock r = multichannel_forward(z[m], *p.next_bank) - p.next_target[m];
      for (Eigen::Index k = 0; k < z[m].cols(); ++k) g.col(k) += conv_adjoint(r.col(k), p.next_bank->kernel(k));
    }
    grad[m] = std::move(g);
  }
  return grad;
}

struct NewtonResult {
  std::vector<ChannelBlock> coeffs;
  bool converged = true;            // false: some block hit max_iters (warning, not an error)
  std::size_t unconverged_blocks = 0;
  int max_block_iters = 0;
};

namespace detail {

struct BlockOutcome {
  Vector z;
  bool converged;
  int iters;
};

/// min 1/2 z^T H z - b^T z  s.t. z >= 0, started at max(z0, 0).
inline BlockOutcome projected_newton_block(const Matrix& h, const Vector& b, const Vector& z0, const NewtonSettings& s) {
  const Eigen::Index n = b.size();
  auto value = [&](const Vector& v) { return 0.5 * v.dot(h * v) - b.dot(v); };
  Vector z = z0.cwiseMax(0.0);
  double fz = value(z);
  if (!std::isfinite(fz)) throw numerical_error("projected Newton: non-finite objective at start");

  for (int it = 0; it < s.max_iters; ++it) {
    const Vector g = h * z - b;
    double pg = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) pg = std::max(pg, z(i) > 0.0 ? std::abs(g(i)) : std::max(-g(i), 0.0));
    if (pg <= s.grad_tol) return {std::move(z), true, it};

    const double width = (z - (z - g).cwiseMax(0.0)).norm();
    const double eps = std::min(s.active_set_eps, width);
    std::vector<Eigen::Index> free_idx;
    std::vector<char> active(static_cast<std::size_t>(n), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (z(i) <= eps && g(i) > 0.0)
        active[static_cast<std::size_t>(i)] = 1;
      else
        free_idx.push_back(i);
    }

    Vector d = Vector::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i)
      if (active[static_cast<std::size_t>(i)]) d(i) = -g(i) / h(i, i);
    if (!free_idx.empty()) {
      const auto nf = static_cast<Eigen::Index>(free_idx.size());
      Matrix hff(nf, nf);
      Vector gf(nf);
      for (Eigen::Index a = 0; a < nf; ++a) {
        gf(a) = g(free_idx[a]);
        for (Eigen::Index c = 0; c < nf; ++c) hff(a, c) = h(free_idx[a], free_idx[c]);
      }
      const Vector df = -factor_spd(hff).solve(gf);
      for (Eigen::Index a = 0; a < nf; ++a) d(free_idx[a]) = df(a);
    }

    double alpha = 1.0;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls, alpha *= s.backtrack_factor) {
      const Vector trial = (z + alpha * d).cwiseMax(0.0);
      const double ft = value(trial);
      if (!std::isfinite(ft)) throw numerical_error("projected Newton: non-finite objective during line search");
      double expected = 0.0;
      for (Eigen::Index i = 0; i < n; ++i)
        expected += active[static_cast<std::size_t>(i)] ? g(i) * (z(i) - trial(i)) : -alpha * g(i) * d(i);
      if (fz - ft >= s.armijo_c * expected && ft <= fz) {
        z = trial;
        fz = ft;
        accepted = true;
        break;
      }
    }
    // No acceptable step: z is stationary to working precision, or stalled.
    if (!accepted) return {std::move(z), pg <= 10.0 * s.grad_tol, it + 1};
  }
  const Vector g = h * z - b;
  double pg = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) pg = std::max(pg, z(i) > 0.0 ? std::abs(g(i)) : std::max(-g(i), 0.0));
  return {std::move(z), pg <= s.grad_tol, s.max_iters};
}

}  // namespace detail

/// Coefficient step for a layer with a following layer. Each (sample, channel)
/// column is an independent bound-constrained QP with Hessian
/// C_k^T C_k + (1 + 1/gamma2) I, where C_k convolves with the next layer's kernel k.
/// Starts from the anchor and only accepts descent steps.
inline NewtonResult projected_newton_coeffs(const CoefficientProblem& p, const NewtonSettings& s = {}) {
  detail::validate(p);
  detail::require(s.max_iters > 0 && s.grad_tol > 0.0 && s.armijo_c > 0.0 && s.armijo_c < 1.0 &&
                      s.backtrack_factor > 0.0 && s.backtrack_factor < 1.0 && s.active_set_eps >= 0.0,
                  "projected_newton_coeffs: invalid settings");
  const Eigen::Index n = p.data.front().rows(), kc = p.data.front().cols();
  const double diag = 1.0 + 1.0 / p.gamma2;

  std::vector<Matrix> conv_ops;
  std::vector<Matrix> hessians;
  conv_ops.reserve(static_cast<std::size_t>(kc));
  hessians.reserve(static_cast<std::size_t>(kc));
  for (Eigen::Index k = 0; k < kc; ++k) {
    if (p.next_bank) {
      Matrix c = convolution_matrix(p.next_bank->kernel(k), n);
      Matrix h = c.transpose() * c;
      h.diagonal().array() += diag;
      conv_ops.push_back(std::move(c));
      hessians.push_back(std::move(h));
    } else {
      hessians.push_back(diag * Matrix::Identity(n, n));
    }
  }

  NewtonResult out;
  out.coeffs.resize(p.data.size());
  for (std::size_t m = 0; m < p.data.size(); ++m) {
    ChannelBlock z(n, kc);
    for (Eigen::Index k = 0; k < kc; ++k) {
      Vector b = p.data[m].col(k) + p.anchor[m].col(k) / p.gamma2;
      b.array() -= p.beta;
      if (p.next_bank) b += conv_ops[static_cast<std::size_t>(k)].transpose() * p.next_target[m].col(k);
      auto res = detail::projected_newton_block(hessians[static_cast<std::size_t>(k)], b, p.anchor[m].col(k), s);
      if (!res.converged) {
        out.converged = false;
        ++out.unconverged_blocks;
      }
      out.max_block_iters = std::max(out.max_block_iters, res.iters);
      z.col(k) = res.z;
    }
    out.coeffs[m] = std::move(z);
  }
  return out;
}

/// Coefficient step for the last layer (no coupling): entrywise closed form.
inline std::vector<ChannelBlock> separable_coeff_update(const CoefficientProblem& p) {
  detail::validate(p);
  detail::require(!p.next_bank, "separable_coeff_update: problem has next-layer coupling");
  const double w = 1.0 + 1.0 / p.gamma2;
  std::vector<ChannelBlock> out(p.data.size());
  for (std::size_t m = 0; m < p.data.size(); ++m) {
    const ChannelBlock u = (p.data[m] + p.anchor[m] / p.gamma2) / w;
    out[m] = u.unaryExpr([&](double v) { return prox_nonneg_l1(v, p.beta, w); });
  }
  return out;
}

}  // namespace dctl
