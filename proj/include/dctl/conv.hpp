#pragma once

// Same-length 1-D convolution with zero padding, its Toeplitz realization,
// and the channel-wise products used by every layer.
//
// Convention: true convolution (kernel reversed), output aligned so that
//   out[n] = sum_j kernel[j] * signal[n + offset - j],   offset = (K - 1) / 2
// with out-of-range signal samples read as zero.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>

#include "dctl/errors.hpp"

namespace dctl {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// One sample's per-layer coefficients: N rows (positions) by K columns (channels).
using ChannelBlock = Matrix;

struct Sample {
  Vector values;
  std::string id;
};

inline Sample make_sample(Vector values, std::string id = {}) {
  detail::require(values.size() > 0, "sample must be non-empty");
  detail::require(values.allFinite(), "sample values must be finite");
  return Sample{std::move(values), std::move(id)};
}

/// K x K matrix whose columns are the K kernels of one layer.
class KernelBank {
public:
  KernelBank() = default;
  explicit KernelBank(Matrix m) : m_(std::move(m)) {
    detail::require(m_.rows() == m_.cols(), "kernel bank must be square");
    detail::require(m_.allFinite(), "kernel bank entries must be finite");
  }

  static KernelBank identity(Eigen::Index k) {
    // unit impulse at the center tap of every kernel
    Matrix m = Matrix::Zero(k, k);
    for (Eigen::Index c = 0; c < k; ++c) m((k - 1) / 2, c) = 1.0;
    return KernelBank(std::move(m));
  }

  Eigen::Index size() const noexcept { return m_.cols(); }
  const Matrix& matrix() const noexcept { return m_; }
  auto kernel(Eigen::Index k) const { return m_.col(k); }

  friend bool operator==(const KernelBank& a, const KernelBank& b) {
    return a.m_.rows() == b.m_.rows() && a.m_.cols() == b.m_.cols() && a.m_ == b.m_;
  }

private:
  Matrix m_;
};

constexpr Eigen::Index conv_offset(Eigen::Index kernel_size) noexcept { return (kernel_size - 1) / 2; }

template <typename SignalT, typename KernelT>
Vector conv_same(const Eigen::MatrixBase<SignalT>& signal, const Eigen::MatrixBase<KernelT>& kernel) {
  const Eigen::Index n = signal.size();
  const Eigen::Index k = kernel.size();
  if (k == 0 || k > n) throw std::invalid_argument("conv_same: kernel must be non-empty and no longer than the signal");
  const Eigen::Index off = conv_offset(k);
  Vector out = Vector::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double acc = 0.0;
    for (Eigen::Index j = 0; j < k; ++j) {
      const Eigen::Index p = i + off - j;
      if (p >= 0 && p < n) acc += kernel(j) * signal(p);
    }
    out(i) = acc;
  }
  return out;
}

/// N x K matrix X with X * t == conv_same(signal, t) for every length-K kernel t.
template <typename SignalT>
Matrix materialize_toeplitz(const Eigen::MatrixBase<SignalT>& signal, Eigen::Index kernel_size) {
  const Eigen::Index n = signal.size();
  if (kernel_size <= 0 || kernel_size > n)
    throw std::invalid_argument("materialize_toeplitz: kernel size must be in [1, N]");
  const Eigen::Index off = conv_offset(kernel_size);
  Matrix x = Matrix::Zero(n, kernel_size);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < kernel_size; ++j) {
      const Eigen::Index p = i + off - j;
      if (p >= 0 && p < n) x(i, j) = signal(p);
    }
  return x;
}

/// N x N matrix C with C * z == conv_same(z, kernel): convolution as an
/// operator on the signal, with the kernel held fixed.
template <typename KernelT>
Matrix convolution_matrix(const Eigen::MatrixBase<KernelT>& kernel, Eigen::Index n) {
  const Eigen::Index k = kernel.size();
  if (k == 0 || k > n) throw std::invalid_argument("convolution_matrix: kernel size must be in [1, N]");
  const Eigen::Index off = conv_offset(k);
  Matrix c = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < k; ++j) {
      const Eigen::Index p = i + off - j;
      if (p >= 0 && p < n) c(i, p) = kernel(j);
    }
  return c;
}

/// Adjoint of z -> conv_same(z, kernel): returns C^T r without forming C.
template <typename ResidualT, typename KernelT>
Vector conv_adjoint(const Eigen::MatrixBase<ResidualT>& residual, const Eigen::MatrixBase<KernelT>& kernel) {
  const Eigen::Index n = residual.size();
  const Eigen::Index k = kernel.size();
  if (k == 0 || k > n) throw std::invalid_argument("conv_adjoint: kernel size must be in [1, N]");
  const Eigen::Index off = conv_offset(k);
  Vector out = Vector::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < k; ++j) {
      const Eigen::Index p = i + off - j;
      if (p >= 0 && p < n) out(p) += kernel(j) * residual(i);
    }
  return out;
}

/// Lazily applied Toeplitz view of one signal (the layer-1 operator).
class ToeplitzOperator {
public:
  ToeplitzOperator(Vector source, Eigen::Index kernel_size) : source_(std::move(source)), k_(kernel_size) {
    if (k_ <= 0 || k_ > source_.size()) throw std::invalid_argument("ToeplitzOperator: kernel size must be in [1, N]");
  }

  Eigen::Index rows() const noexcept { return source_.size(); }
  Eigen::Index cols() const noexcept { return k_; }
  const Vector& source() const noexcept { return source_; }

  template <typename KernelT>
  Vector apply(const Eigen::MatrixBase<KernelT>& kernel) const {
    detail::require(kernel.size() == k_, "ToeplitzOperator::apply: kernel length mismatch");
    return conv_same(source_, kernel);
  }

  Matrix materialize() const { return materialize_toeplitz(source_, k_); }

private:
  Vector source_;
  Eigen::Index k_;
};

/// Column k of the result is conv_same(block.col(k), bank.kernel(k)); no
/// summation across channels.
inline ChannelBlock multichannel_forward(const ChannelBlock& block, const KernelBank& bank) {
  if (block.cols() != bank.size()) throw std::invalid_argument("multichannel_forward: channel count mismatch");
  ChannelBlock out(block.rows(), block.cols());
  for (Eigen::Index k = 0; k < block.cols(); ++k) out.col(k) = conv_same(block.col(k), bank.kernel(k));
  return out;
}

/// Layer-1 input: the raw signal replicated into every channel, so that
/// multichannel_forward(replicate_channels(x, K), T) == X T.
template <typename SignalT>
ChannelBlock replicate_channels(const Eigen::MatrixBase<SignalT>& signal, Eigen::Index channels) {
  detail::require(channels > 0, "replicate_channels: channel count must be positive");
  return signal.derived().replicate(1, channels);
}

/// Forward product of one layer. Layer 1 (1-based) reads `input` as a single
/// signal column and forms X T; deeper layers apply channel-wise convolution.
inline ChannelBlock layer_forward(const ChannelBlock& input, const KernelBank& bank, std::size_t layer) {
  detail::require(layer >= 1, "layer_forward: layers are 1-based");
  if (layer == 1) {
    detail::require(input.cols() >= 1, "layer_forward: empty input");
    return materialize_toeplitz(input.col(0), bank.size()) * bank.matrix();
  }
  return multichannel_forward(input, bank);
}

}  // namespace dctl
