#pragma once

// Downstream evaluation: KNN and nearest-centroid classification, k-means
// with three seedings, Adjusted Rand Index, accuracy and wall-clock timing.
// Distances are Euclidean throughout.

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "dctl/conv.hpp"
#include "dctl/errors.hpp"

namespace dctl {

using Labels = std::vector<int>;

struct LabeledFeatures {
  Matrix features;  // one row per sample
  Labels labels;
};

inline void validate(const LabeledFeatures& lf) {
  detail::require(lf.features.rows() == static_cast<Eigen::Index>(lf.labels.size()), "one label per feature row");
  detail::require(lf.features.cols() > 0, "feature dimension must be positive");
  for (int l : lf.labels) detail::require(l >= 0, "labels must be >= 0");
}

namespace detail {

/// Most frequent label; ties go to the smallest label.
inline int majority(const std::map<int, std::size_t>& votes) {
  int best = -1;
  std::size_t best_count = 0;
  for (const auto& [label, count] : votes)
    if (count > best_count) {
      best = label;
      best_count = count;
    }
  return best;
}

}  // namespace detail

/// k nearest training rows vote; distance ties resolve to the lower training
/// index, vote ties to the smallest label.
inline Labels knn_classify(const LabeledFeatures& train, const Matrix& test, std::size_t k) {
  detail::require(train.features.rows() > 0, "knn_classify: empty training set");
  validate(train);
  detail::require(k >= 1 && k <= train.labels.size(), "knn_classify: k must be in [1, M_train]");
  detail::require(test.cols() == train.features.cols(), "knn_classify: feature dimension mismatch");

  const Matrix tr = train.features.transpose();
  const Eigen::Index mt = tr.cols();
  Labels out(static_cast<std::size_t>(test.rows()));
  std::vector<std::pair<double, Eigen::Index>> dist(static_cast<std::size_t>(mt));
  for (Eigen::Index q = 0; q < test.rows(); ++q) {
    const Vector x = test.row(q).transpose();
    for (Eigen::Index i = 0; i < mt; ++i) dist[static_cast<std::size_t>(i)] = {(tr.col(i) - x).squaredNorm(), i};
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
    std::map<int, std::size_t> votes;
    for (std::size_t j = 0; j < k; ++j) ++votes[train.labels[static_cast<std::size_t>(dist[j].second)]];
    out[static_cast<std::size_t>(q)] = detail::majority(votes);
  }
  return out;
}

/// Assigns each test row the label whose training-class mean is nearest.
inline Labels nearest_centroid_classify(const LabeledFeatures& train, const Matrix& test) {
  detail::require(train.features.rows() > 0, "nearest_centroid_classify: empty training set");
  validate(train);
  detail::require(test.cols() == train.features.cols(), "nearest_centroid_classify: feature dimension mismatch");
  std::map<int, std::pair<Vector, std::size_t>> sums;
  for (std::size_t i = 0; i < train.labels.size(); ++i) {
    auto [it, fresh] = sums.try_emplace(train.labels[i], Vector::Zero(train.features.cols()), 0);
    it->second.first += train.features.row(static_cast<Eigen::Index>(i)).transpose();
    ++it->second.second;
  }
  std::vector<std::pair<int, Vector>> centroids;
  for (auto& [label, acc] : sums) centroids.emplace_back(label, acc.first / static_cast<double>(acc.second));

  Labels out(static_cast<std::size_t>(test.rows()));
  for (Eigen::Index q = 0; q < test.rows(); ++q) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& [label, c] : centroids) {
      const double d = (test.row(q).transpose() - c).squaredNorm();
      if (d < best) {
        best = d;
        out[static_cast<std::size_t>(q)] = label;
      }
    }
  }
  return out;
}

inline double accuracy(const Labels& predicted, const Labels& truth) {
  detail::require(predicted.size() == truth.size(), "accuracy: length mismatch");
  if (truth.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += predicted[i] == truth[i];
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

/// Pair-counting Adjusted Rand Index from the contingency table. Identical
/// trivial partitions (all-in-one or all-singletons on both sides, or M < 2)
/// score 1.
inline double adjusted_rand_index(const Labels& a, const Labels& b) {
  detail::require(a.size() == b.size(), "adjusted_rand_index: length mismatch");
  auto comb2 = [](double n) { return 0.5 * n * (n - 1.0); };
  std::map<std::pair<int, int>, double> table;
  std::map<int, double> rows, cols;
  for (std::size_t i = 0; i < a.size(); ++i) {
    table[{a[i], b[i]}] += 1.0;
    rows[a[i]] += 1.0;
    cols[b[i]] += 1.0;
  }
  double index = 0.0, sum_a = 0.0, sum_b = 0.0;
  for (const auto& [key, n] : table) index += comb2(n);
  for (const auto& [key, n] : rows) sum_a += comb2(n);
  for (const auto& [key, n] : cols) sum_b += comb2(n);
  const double total = comb2(static_cast<double>(a.size()));
  if (total == 0.0) return 1.0;
  const double expected = sum_a * sum_b / total;
  const double max_index = 0.5 * (sum_a + sum_b);
  if (max_index == expected) return 1.0;
  return (index - expected) / (max_index - expected);
}

/// Runs `op` once and returns its result with the elapsed monotonic wall time.
template <typename F>
auto timed(F&& op) {
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  if constexpr (std::is_void_v<std::invoke_result_t<F>>) {
    std::forward<F>(op)();
    return std::chrono::duration<double>(clock::now() - start).count();
  } else {
    auto result = std::forward<F>(op)();
    const double secs = std::chrono::duration<double>(clock::now() - start).count();
    return std::make_pair(std::move(result), secs);
  }
}

enum class KMeansInit { kmeanspp, random, pca };

inline const char* to_string(KMeansInit init) {
  switch (init) {
    case KMeansInit::kmeanspp: return "kmeans++";
    case KMeansInit::random: return "random";
    case KMeansInit::pca: return "pca";
  }
  return "?";
}

struct ClusteringResult {
  Labels assignments;
  Matrix centroids;  // C x D
  double inertia = 0.0;
  double elapsed_seconds = 0.0;
  std::vector<double> inertia_trace;  // after every assignment step
  std::size_t iterations = 0;
};

namespace detail {

/// D^2 seeding over the columns of `pts` (D x M). Returns chosen column indices.
inline std::vector<Eigen::Index> dsquared_seeding(const Matrix& pts, Eigen::Index c, std::mt19937_64& rng) {
  const Eigen::Index m = pts.cols();
  std::vector<Eigen::Index> chosen;
  std::uniform_int_distribution<Eigen::Index> first(0, m - 1);
  chosen.push_back(first(rng));
  Vector d2(m);
  for (Eigen::Index i = 0; i < m; ++i) d2(i) = (pts.col(i) - pts.col(chosen[0])).squaredNorm();
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  while (static_cast<Eigen::Index>(chosen.size()) < c) {
    const double total = d2.sum();
    Eigen::Index pick = -1;
    if (total > 0.0) {
      const double r = unif(rng) * total;
      double acc = 0.0;
      for (Eigen::Index i = 0; i < m; ++i) {
        acc += d2(i);
        if (d2(i) > 0.0 && acc >= r) {
          pick = i;
          break;
        }
      }
      if (pick < 0)  // rounding at the tail
        for (Eigen::Index i = m - 1; i >= 0; --i)
          if (d2(i) > 0.0) {
            pick = i;
            break;
          }
    } else {
      // every point coincides with a chosen centre: take the lowest unused index
      for (Eigen::Index i = 0; i < m && pick < 0; ++i)
        if (std::find(chosen.begin(), chosen.end(), i) == chosen.end()) pick = i;
    }
    chosen.push_back(pick);
    for (Eigen::Index i = 0; i < m; ++i) d2(i) = std::min(d2(i), (pts.col(i) - pts.col(pick)).squaredNorm());
  }
  return chosen;
}

}  // namespace detail

/// Lloyd iterations from one of three seedings:
///  - kmeanspp: D^2 seeding on the rows;
///  - random: C distinct rows chosen uniformly;
///  - pca: D^2 seeding in the span of the first C-1 principal directions,
///    centres mapped back as mean + V c.
/// A cluster that empties is re-seeded at the point farthest from its current
/// centre (lowest index on ties).
inline ClusteringResult kmeans(const Matrix& features, Eigen::Index c, KMeansInit init, std::uint64_t seed,
                               std::size_t max_iters = 300, double tol = 1e-6) {
  const Eigen::Index m = features.rows();
  const Eigen::Index d = features.cols();
  if (c < 1 || c > m) throw std::invalid_argument("kmeans: cluster count must be in [1, M]");
  detail::require(d > 0, "kmeans: feature dimension must be positive");

  ClusteringResult res;
  res.elapsed_seconds = timed([&] {
    const Matrix pts = features.transpose();  // D x M, columns are points
    std::mt19937_64 rng(seed);
    Matrix cent(d, c);

    switch (init) {
      case KMeansInit::kmeanspp: {
        const auto idx = detail::dsquared_seeding(pts, c, rng);
        for (Eigen::Index j = 0; j < c; ++j) cent.col(j) = pts.col(idx[static_cast<std::size_t>(j)]);
        break;
      }
      case KMeansInit::random: {
        std::vector<Eigen::Index> idx(static_cast<std::size_t>(m));
        std::iota(idx.begin(), idx.end(), Eigen::Index{0});
        std::shuffle(idx.begin(), idx.end(), rng);
        for (Eigen::Index j = 0; j < c; ++j) cent.col(j) = pts.col(idx[static_cast<std::size_t>(j)]);
        break;
      }
      case KMeansInit::pca: {
        const Vector mean = pts.rowwise().mean();
        const Eigen::Index r = std::min<Eigen::Index>({c - 1, d, m});
        if (r == 0) {
          cent.colwise() = mean;
          // C == 1 (or degenerate): a single centre at the mean
          break;
        }
        const Matrix centered = pts.colwise() - mean;
        Eigen::BDCSVD<Matrix> svd(centered, Eigen::ComputeThinU);
        const Matrix basis = svd.matrixU().leftCols(r);  // D x r
        const Matrix proj = basis.transpose() * centered;  // r x M
        const auto idx = detail::dsquared_seeding(proj, c, rng);
        for (Eigen::Index j = 0; j < c; ++j) cent.col(j) = mean + basis * proj.col(idx[static_cast<std::size_t>(j)]);
        break;
      }
    }

    Labels assign(static_cast<std::size_t>(m), 0);
    Vector dist(m);
    auto assign_step = [&] {
      for (Eigen::Index i = 0; i < m; ++i) {
        double best = std::numeric_limits<double>::infinity();
        int arg = 0;
        for (Eigen::Index j = 0; j < c; ++j) {
          const double dd = (pts.col(i) - cent.col(j)).squaredNorm();
          if (dd < best) {
            best = dd;
            arg = static_cast<int>(j);
          }
        }
        assign[static_cast<std::size_t>(i)] = arg;
        dist(i) = best;
      }
      // re-seed empty clusters at the farthest point
      std::vector<Eigen::Index> counts(static_cast<std::size_t>(c), 0);
      for (int a : assign) ++counts[static_cast<std::size_t>(a)];
      for (Eigen::Index j = 0; j < c; ++j) {
        if (counts[static_cast<std::size_t>(j)] > 0) continue;
        Eigen::Index far = -1;
        for (Eigen::Index i = 0; i < m; ++i)
          if (counts[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])] > 1 && (far < 0 || dist(i) > dist(far))) far = i;
        if (far < 0) continue;
        --counts[static_cast<std::size_t>(assign[static_cast<std::size_t>(far)])];
        ++counts[static_cast<std::size_t>(j)];
        cent.col(j) = pts.col(far);
        assign[static_cast<std::size_t>(far)] = static_cast<int>(j);
        dist(far) = 0.0;
      }
      return dist.sum();
    };

    for (std::size_t it = 0; it < max_iters; ++it) {
      res.inertia_trace.push_back(assign_step());
      ++res.iterations;
      Matrix next = Matrix::Zero(d, c);
      Vector counts = Vector::Zero(c);
      for (Eigen::Index i = 0; i < m; ++i) {
        next.col(assign[static_cast<std::size_t>(i)]) += pts.col(i);
        counts(assign[static_cast<std::size_t>(i)]) += 1.0;
      }
      double shift = 0.0;
      for (Eigen::Index j = 0; j < c; ++j) {
        if (counts(j) > 0.0) next.col(j) /= counts(j);
        else next.col(j) = cent.col(j);
        shift = std::max(shift, (next.col(j) - cent.col(j)).norm());
      }
      cent = std::move(next);
      if (shift < tol) break;
    }
    res.inertia = assign_step();
    res.inertia_trace.push_back(res.inertia);
    res.assignments = std::move(assign);
    res.centroids = cent.transpose();
  });
  return res;
}

}  // namespace dctl
