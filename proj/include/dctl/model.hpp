#pragma once

// Stacked convolutional transform model: objective, alternating proximal
// training, and the feed-forward encoder.
//
// Reductions over samples always run in ascending sample index, so results
// are reproducible bit-for-bit for a fixed sample order.

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dctl/conv.hpp"
#include "dctl/errors.hpp"
#include "dctl/prox.hpp"

namespace dctl {

/// Coefficients of one layer for all M samples, each block N x K.
using CoefficientStack = std::vector<ChannelBlock>;

struct ModelConfig {
  std::size_t num_layers = 3;
  Eigen::Index num_kernels = 8;  // kernel length == kernel count
  double mu = 0.01;
  double lambda = 0.01;
  double beta = 0.01;
  double gamma1 = 1.0;
  double gamma2 = 1.0;
  std::size_t max_outer_iters = 100;
  double objective_tol = 1e-6;
  std::uint64_t seed = 0;
  double init_scale = 0.1;  // 0 gives identity transforms
  NewtonSettings newton{};

  void validate() const {
    detail::require(num_layers >= 1, "config: num_layers must be >= 1");
    detail::require(num_kernels >= 1, "config: num_kernels must be >= 1");
    detail::require(mu >= 0.0 && std::isfinite(mu), "config: mu must be finite and >= 0");
    detail::require(lambda > 0.0 && std::isfinite(lambda), "config: lambda must be finite and > 0");
    detail::require(beta >= 0.0 && std::isfinite(beta), "config: beta must be finite and >= 0");
    detail::require(gamma1 > 0.0, "config: gamma1 must be > 0");
    detail::require(gamma2 > 0.0 && std::isfinite(gamma2), "config: gamma2 must be finite and > 0");
    detail::require(max_outer_iters >= 1, "config: max_outer_iters must be >= 1");
    detail::require(objective_tol >= 0.0, "config: objective_tol must be >= 0");
    detail::require(init_scale >= 0.0 && std::isfinite(init_scale), "config: init_scale must be finite and >= 0");
  }
};

struct TraceEntry {
  std::size_t iter;   // 0 is the initial point
  std::size_t layer;  // 0 for the initial point, else 1-based layer just updated
  double objective;
};

struct TrainedModel {
  std::vector<KernelBank> transforms;
  ModelConfig config;
  std::vector<TraceEntry> trace;
  std::size_t num_samples = 0;    // M
  Eigen::Index signal_length = 0;  // N
  std::size_t newton_warnings = 0;  // coefficient steps that hit max_iters
};

namespace detail {

inline void validate_data(const std::vector<Sample>& data, Eigen::Index k) {
  require(!data.empty(), "no samples");
  const Eigen::Index n = data.front().values.size();
  require(n >= k, "signal length must be >= kernel size");
  for (const auto& s : data) {
    require(s.values.size() == n, "all samples must share the same length");
    require(s.values.allFinite(), "sample values must be finite");
  }
}

inline std::vector<Matrix> toeplitz_views(const std::vector<Sample>& data, Eigen::Index k) {
  std::vector<Matrix> out;
  out.reserve(data.size());
  for (const auto& s : data) out.push_back(materialize_toeplitz(s.values, k));
  return out;
}

/// Forward product of layer `layer` (1-based) for sample m.
inline ChannelBlock forward(const std::vector<Matrix>& toeplitz, const std::vector<CoefficientStack>& coeffs,
                            const KernelBank& bank, std::size_t layer, std::size_t m) {
  if (layer == 1) return toeplitz[m] * bank.matrix();
  return multichannel_forward(coeffs[layer - 2][m], bank);
}

inline double objective_impl(const std::vector<KernelBank>& transforms, const std::vector<CoefficientStack>& coeffs,
                             const std::vector<Matrix>& toeplitz, const ModelConfig& cfg) {
  const double inf = std::numeric_limits<double>::infinity();
  double total = 0.0;
  for (std::size_t l = 1; l <= transforms.size(); ++l) {
    const auto& t = transforms[l - 1];
    const auto& z = coeffs[l - 1];
    const double ld = log_abs_det(t.matrix());
    if (!std::isfinite(ld)) return inf;
    double fit = 0.0, l1 = 0.0;
    for (std::size_t m = 0; m < z.size(); ++m) {
      if ((z[m].array() < 0.0).any()) return inf;
      fit += (forward(toeplitz, coeffs, t, l, m) - z[m]).squaredNorm();
      l1 += z[m].sum();
    }
    total += 0.5 * fit + cfg.mu * t.matrix().squaredNorm() - cfg.lambda * ld + cfg.beta * l1;
  }
  return total;
}

inline void validate_state(const std::vector<KernelBank>& transforms, const std::vector<CoefficientStack>& coeffs,
                           const std::vector<Sample>& data, const ModelConfig& cfg) {
  require(transforms.size() == cfg.num_layers, "transform count must equal num_layers");
  require(coeffs.size() == cfg.num_layers, "coefficient stack count must equal num_layers");
  const Eigen::Index k = cfg.num_kernels;
  validate_data(data, k);
  const Eigen::Index n = data.front().values.size();
  for (const auto& t : transforms) require(t.size() == k, "transform size must equal num_kernels");
  for (const auto& z : coeffs) {
    require(z.size() == data.size(), "coefficient stack must have one block per sample");
    for (const auto& b : z) require(b.rows() == n && b.cols() == k, "coefficient block must be N x K");
  }
}

}  // namespace detail

/// Training objective: sum over layers of
///   1/2 sum_m ||forward_l(m) - Z_{m,l}||^2 + mu ||T_l||^2 - lambda sum log sigma(T_l) + beta ||Z_l||_1
/// and +inf for a singular transform or a negative coefficient.
inline double objective(const std::vector<KernelBank>& transforms, const std::vector<CoefficientStack>& coeffs,
                        const std::vector<Sample>& data, const ModelConfig& cfg) {
  detail::validate_state(transforms, coeffs, data, cfg);
  return detail::objective_impl(transforms, coeffs, detail::toeplitz_views(data, cfg.num_kernels), cfg);
}

struct InitialState {
  std::vector<KernelBank> transforms;
  std::vector<CoefficientStack> coeffs;
};

/// T_l = I + init_scale * R, R uniform(-1, 1) from the seeded generator,
/// redrawn while sigma_min < 0.01. Z_l = max(0, forward pass).
inline InitialState init_model(const ModelConfig& cfg, const std::vector<Sample>& data) {
  cfg.validate();
  const Eigen::Index k = cfg.num_kernels;
  detail::validate_data(data, k);
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);

  InitialState st;
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    Matrix t;
    for (;;) {
      t = Matrix::Identity(k, k);
      for (Eigen::Index j = 0; j < k; ++j)
        for (Eigen::Index i = 0; i < k; ++i) t(i, j) += cfg.init_scale * unif(rng);
      Eigen::JacobiSVD<Matrix> svd(t);
      if (svd.singularValues().minCoeff() >= 0.01) break;
    }
    st.transforms.emplace_back(std::move(t));
  }

  const auto toeplitz = detail::toeplitz_views(data, k);
  for (std::size_t l = 1; l <= cfg.num_layers; ++l) {
    CoefficientStack z;
    z.reserve(data.size());
    for (std::size_t m = 0; m < data.size(); ++m)
      z.push_back(detail::forward(toeplitz, st.coeffs, st.transforms[l - 1], l, m).cwiseMax(0.0));
    st.coeffs.push_back(std::move(z));
  }
  return st;
}

struct TrainResult {
  TrainedModel model;
  std::vector<CoefficientStack> coeffs;  // final Z_1 .. Z_L on the training data
};

/// Observer called after every recorded objective value.
using TraceCallback = std::function<void(const TraceEntry&)>;

/// Alternating proximal minimization. Each outer iteration sweeps l = 1..L,
/// updating T_l (proximal log-det step) and then Z_l (projected Newton when a
/// next layer couples it, entrywise closed form for the last layer). Stops
/// after max_outer_iters or when an outer iteration lowers the objective by
/// less than objective_tol relative to its starting value.
inline TrainResult train_from(const std::vector<Sample>& data, const ModelConfig& cfg, InitialState init,
                              const TraceCallback& on_trace = {}) {
  cfg.validate();
  detail::validate_state(init.transforms, init.coeffs, data, cfg);
  const Eigen::Index k = cfg.num_kernels;
  const std::size_t nl = cfg.num_layers;
  const std::size_t ms = data.size();
  const auto toeplitz = detail::toeplitz_views(data, k);

  Matrix gram1 = Matrix::Zero(k, k);
  for (std::size_t m = 0; m < ms; ++m) gram1 += toeplitz[m].transpose() * toeplitz[m];

  auto& transforms = init.transforms;
  auto& coeffs = init.coeffs;
  TrainResult out;
  auto record = [&](std::size_t it, std::size_t layer, double f) {
    out.model.trace.push_back({it, layer, f});
    if (on_trace) on_trace(out.model.trace.back());
  };

  double f = detail::objective_impl(transforms, coeffs, toeplitz, cfg);
  record(0, 0, f);

  for (std::size_t it = 1; it <= cfg.max_outer_iters; ++it) {
    const double f_start = f;
    for (std::size_t l = 1; l <= nl; ++l) {
      auto fail = [&](const char* step, const std::exception& e) -> numerical_error {
        std::ostringstream os;
        os << "training failed at iteration " << it << ", layer " << l << ", " << step << " step: " << e.what();
        return numerical_error(os.str());
      };

      try {
        if (l == 1) {
          Matrix cross = Matrix::Zero(k, k);
          for (std::size_t m = 0; m < ms; ++m) cross += toeplitz[m].transpose() * coeffs[0][m];
          transforms[0] = KernelBank(update_transform({gram1, cross, transforms[0].matrix(), cfg.mu, cfg.lambda, cfg.gamma1}));
        } else {
          ChannelwiseTransformInputs in;
          in.grams.assign(static_cast<std::size_t>(k), Matrix::Zero(k, k));
          in.cross = Matrix::Zero(k, k);
          in.anchor = transforms[l - 1].matrix();
          in.mu = cfg.mu;
          in.lambda = cfg.lambda;
          in.gamma1 = cfg.gamma1;
          for (std::size_t m = 0; m < ms; ++m) {
            const auto& zin = coeffs[l - 2][m];
            const auto& zout = coeffs[l - 1][m];
            for (Eigen::Index c = 0; c < k; ++c) {
              const Matrix op = materialize_toeplitz(zin.col(c), k);
              in.grams[static_cast<std::size_t>(c)] += op.transpose() * op;
              in.cross.col(c) += op.transpose() * zout.col(c);
            }
          }
          transforms[l - 1] = KernelBank(update_transform_channelwise(in));
        }
      } catch (const numerical_error& e) {
        throw fail("transform", e);
      }

      try {
        CoefficientProblem prob;
        prob.data.reserve(ms);
        for (std::size_t m = 0; m < ms; ++m) prob.data.push_back(detail::forward(toeplitz, coeffs, transforms[l - 1], l, m));
        prob.anchor = coeffs[l - 1];
        prob.beta = cfg.beta;
        prob.gamma2 = cfg.gamma2;
        if (l < nl) {
          prob.next_bank = transforms[l];
          prob.next_target = coeffs[l];
          auto res = projected_newton_coeffs(prob, cfg.newton);
          if (!res.converged) ++out.model.newton_warnings;
          coeffs[l - 1] = std::move(res.coeffs);
        } else {
          coeffs[l - 1] = separable_coeff_update(prob);
        }
      } catch (const numerical_error& e) {
        throw fail("coefficient", e);
      }

      f = detail::objective_impl(transforms, coeffs, toeplitz, cfg);
      if (!std::isfinite(f)) throw numerical_error("training produced a non-finite objective at iteration " + std::to_string(it) + ", layer " + std::to_string(l));
      record(it, l, f);
    }
    const double decrease = f_start - f;
    if (decrease < cfg.objective_tol * std::abs(f_start)) break;
  }

  out.model.transforms = std::move(transforms);
  out.model.config = cfg;
  out.model.num_samples = ms;
  out.model.signal_length = data.front().values.size();
  out.coeffs = std::move(coeffs);
  return out;
}

inline TrainResult train_full(const std::vector<Sample>& data, const ModelConfig& cfg, const TraceCallback& on_trace = {}) {
  return train_from(data, cfg, init_model(cfg, data), on_trace);
}

inline TrainedModel train(const std::vector<Sample>& data, const ModelConfig& cfg, const TraceCallback& on_trace = {}) {
  return train_full(data, cfg, on_trace).model;
}

struct EncodeOptions {
  bool keep_all_layers = false;
  Eigen::Index pool = 1;  // average non-overlapping windows of this many positions
};

struct Encoding {
  Matrix features;                       // M rows; pooled final layer flattened position-major
  std::vector<CoefficientStack> layers;  // Z_1..Z_L when keep_all_layers
};

/// Average pooling over positions; the trailing partial window is averaged
/// over the positions it has.
inline ChannelBlock pool_positions(const ChannelBlock& z, Eigen::Index pool) {
  detail::require(pool >= 1, "pool width must be >= 1");
  if (pool == 1) return z;
  const Eigen::Index rows = (z.rows() + pool - 1) / pool;
  ChannelBlock out(rows, z.cols());
  for (Eigen::Index r = 0; r < rows; ++r) {
    const Eigen::Index start = r * pool;
    const Eigen::Index len = std::min(pool, z.rows() - start);
    out.row(r) = z.middleRows(start, len).colwise().mean();
  }
  return out;
}

/// Feed-forward encoder: A_1 = X T_1, A_l = multichannel_forward(Z_{l-1}, T_l),
/// Z_l = max(A_l - beta, 0). Features are the flattened final-layer Z_L.
inline Encoding encode(const TrainedModel& model, const std::vector<Sample>& data, const EncodeOptions& opts = {}) {
  const Eigen::Index k = model.config.num_kernels;
  detail::require(model.transforms.size() == model.config.num_layers && !model.transforms.empty(),
                  "encode: model has no transforms");
  detail::require(opts.pool >= 1, "encode: pool width must be >= 1");
  detail::validate_data(data, k);
  const Eigen::Index n = data.front().values.size();
  detail::require(model.signal_length == 0 || n == model.signal_length, "encode: sample length differs from training data");

  const Eigen::Index rows = (n + opts.pool - 1) / opts.pool;
  Encoding enc;
  enc.features.resize(static_cast<Eigen::Index>(data.size()), rows * k);
  if (opts.keep_all_layers) enc.layers.assign(model.transforms.size(), CoefficientStack(data.size()));

  const double beta = model.config.beta;
  for (std::size_t m = 0; m < data.size(); ++m) {
    ChannelBlock z = (materialize_toeplitz(data[m].values, k) * model.transforms[0].matrix()).array() - beta;
    z = z.cwiseMax(0.0);
    if (opts.keep_all_layers) enc.layers[0][m] = z;
    for (std::size_t l = 1; l < model.transforms.size(); ++l) {
      z = (multichannel_forward(z, model.transforms[l]).array() - beta).cwiseMax(0.0);
      if (opts.keep_all_layers) enc.layers[l][m] = z;
    }
    const ChannelBlock pooled = pool_positions(z, opts.pool);
    for (Eigen::Index r = 0; r < pooled.rows(); ++r)
      enc.features.row(static_cast<Eigen::Index>(m)).segment(r * k, k) = pooled.row(r);
  }
  return enc;
}

}  // namespace dctl
