#pragma once

// Small black-box regressors: a constant, ordinary least squares with an
// intercept, and k-nearest neighbours (point and empirical quantiles).
// Features are z-scored per column with training statistics.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "cia/core.hpp"
#include "cia/diagnostics.hpp"

namespace cia {

enum class ModelKind { mean, linear_ls, knn };

constexpr std::string_view to_string(ModelKind k) noexcept {
  switch (k) {
    case ModelKind::mean: return "mean";
    case ModelKind::linear_ls: return "linear_ls";
    case ModelKind::knn: return "knn";
  }
  return "?";
}

inline ModelKind parse_model_kind(std::string_view s) {
  if (s == "mean") return ModelKind::mean;
  if (s == "linear_ls" || s == "linear") return ModelKind::linear_ls;
  if (s == "knn") return ModelKind::knn;
  throw InputError(fmt::format("unknown model kind '{}'", s));
}

struct ModelOptions {
  std::size_t k_neighbors = 30;
  double ridge = 1e-6;  // used only when the design matrix is rank deficient
};

/// Empirical quantile of sorted values by the lower order statistic
/// ceil(k * level), clamped to [1, k].
inline double quantile_of_sorted(std::span<const double> sorted, double level) {
  if (sorted.empty()) throw InputError("quantile of an empty sample");
  const double pos = std::ceil(static_cast<double>(sorted.size()) * level - 1e-9);
  const auto rank = static_cast<std::size_t>(std::clamp(pos, 1.0, static_cast<double>(sorted.size())));
  return sorted[rank - 1];
}

class FittedModel {
 public:
  [[nodiscard]] ModelKind kind() const noexcept { return kind_; }
  [[nodiscard]] std::size_t k_neighbors() const noexcept { return k_; }
  [[nodiscard]] std::size_t feature_dim() const noexcept { return static_cast<std::size_t>(mean_.size()); }

  [[nodiscard]] double predict_point(std::span<const double> features) const {
    switch (kind_) {
      case ModelKind::mean: return label_mean_;
      case ModelKind::linear_ls: {
        const Eigen::VectorXd z = standardize(features);
        return coef_(0) + coef_.tail(coef_.size() - 1).dot(z);
      }
      case ModelKind::knn: {
        const auto nn = neighbours(features);
        double total = 0.0;
        for (auto p : nn) total += labels_[p];
        return total / static_cast<double>(nn.size());
      }
    }
    return label_mean_;
  }

  /// Labels of the k nearest training rows, sorted ascending (knn only).
  [[nodiscard]] std::vector<double> neighbour_labels(std::span<const double> features) const {
    require_knn();
    std::vector<double> out;
    for (auto p : neighbours(features)) out.push_back(labels_[p]);
    std::sort(out.begin(), out.end());
    return out;
  }

  [[nodiscard]] std::pair<double, double> predict_quantiles(std::span<const double> features, double lo_level,
                                                            double hi_level) const {
    if (lo_level > hi_level) std::swap(lo_level, hi_level);
    const auto labels = neighbour_labels(features);
    return {quantile_of_sorted(labels, lo_level), quantile_of_sorted(labels, hi_level)};
  }

 private:
  friend FittedModel fit(std::span<const LabeledSample> train, ModelKind kind, const ModelOptions& options);

  void require_knn() const {
    if (kind_ != ModelKind::knn) throw InputError(fmt::format("model '{}' does not produce quantiles", to_string(kind_)));
  }

  [[nodiscard]] Eigen::VectorXd standardize(std::span<const double> x) const {
    if (x.size() != static_cast<std::size_t>(mean_.size()))
      throw InputError(fmt::format("expected {} features, got {}", mean_.size(), x.size()));
    Eigen::VectorXd z(mean_.size());
    for (Eigen::Index j = 0; j < mean_.size(); ++j) z(j) = (x[static_cast<std::size_t>(j)] - mean_(j)) / scale_(j);
    return z;
  }

  // Nearest training rows by Euclidean distance on standardized features;
  // equal distances resolve to the earlier training row.
  [[nodiscard]] std::vector<std::size_t> neighbours(std::span<const double> x) const {
    const Eigen::VectorXd z = standardize(x);
    const auto n = static_cast<std::size_t>(train_.rows());
    std::vector<std::pair<double, std::size_t>> dist(n);
    for (std::size_t i = 0; i < n; ++i)
      dist[i] = {(train_.row(static_cast<Eigen::Index>(i)).transpose() - z).squaredNorm(), i};
    const std::size_t k = std::min(k_, n);
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
    std::vector<std::size_t> out(k);
    for (std::size_t j = 0; j < k; ++j) out[j] = dist[j].second;
    return out;
  }

  ModelKind kind_ = ModelKind::mean;
  std::size_t k_ = 0;
  double label_mean_ = 0.0;
  Eigen::VectorXd mean_;
  Eigen::VectorXd scale_;
  Eigen::VectorXd coef_;   // intercept first
  Eigen::MatrixXd train_;  // standardized training features (knn)
  std::vector<double> labels_;
};

/// Deterministic fit. Rank-deficient least squares falls back to a ridge
/// solve with `options.ridge` (intercept unpenalised) and a diagnostic.
inline FittedModel fit(std::span<const LabeledSample> train, ModelKind kind, const ModelOptions& options = {}) {
  if (train.empty()) throw InputError("cannot fit a model on an empty training set");
  const std::size_t n = train.size();
  const std::size_t d = train.front().features.size();
  for (const auto& s : train)
    if (s.features.size() != d)
      throw InputError(fmt::format("sample {} has {} features, expected {}", s.index, s.features.size(), d));

  FittedModel m;
  m.kind_ = kind;
  m.labels_.reserve(n);
  for (const auto& s : train) m.labels_.push_back(field_value(s, Field::label));
  m.label_mean_ = std::accumulate(m.labels_.begin(), m.labels_.end(), 0.0) / static_cast<double>(n);

  const auto dd = static_cast<Eigen::Index>(d);
  m.mean_ = Eigen::VectorXd::Zero(dd);
  m.scale_ = Eigen::VectorXd::Ones(dd);
  for (Eigen::Index j = 0; j < dd; ++j) {
    double mu = 0.0;
    for (const auto& s : train) mu += s.features[static_cast<std::size_t>(j)];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (const auto& s : train) {
      const double c = s.features[static_cast<std::size_t>(j)] - mu;
      var += c * c;
    }
    const double sd = std::sqrt(var / static_cast<double>(n));
    m.mean_(j) = mu;
    m.scale_(j) = sd > 0.0 ? sd : 1.0;
  }

  if (kind == ModelKind::mean) return m;

  Eigen::MatrixXd z(static_cast<Eigen::Index>(n), dd);
  for (std::size_t i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < dd; ++j)
      z(static_cast<Eigen::Index>(i), j) = (train[i].features[static_cast<std::size_t>(j)] - m.mean_(j)) / m.scale_(j);

  if (kind == ModelKind::knn) {
    if (options.k_neighbors == 0) throw InputError("knn needs k >= 1");
    m.k_ = options.k_neighbors;
    if (m.k_ > n) {
      Diagnostics::report(fmt::format("knn: k={} exceeds training size {}, using k={}", m.k_, n, n));
      m.k_ = n;
    }
    m.train_ = std::move(z);
    return m;
  }

  Eigen::MatrixXd x(static_cast<Eigen::Index>(n), dd + 1);
  x.col(0).setOnes();
  x.rightCols(dd) = z;
  const Eigen::Map<const Eigen::VectorXd> y(m.labels_.data(), static_cast<Eigen::Index>(n));
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  if (qr.rank() == dd + 1) {
    m.coef_ = qr.solve(y);
  } else {
    Diagnostics::report(fmt::format("linear_ls: design matrix rank {} < {}, ridge fallback lambda={}", qr.rank(), dd + 1,
                                    options.ridge));
    Eigen::MatrixXd gram = x.transpose() * x;
    gram.diagonal().tail(dd).array() += options.ridge;
    m.coef_ = gram.ldlt().solve(x.transpose() * y);
  }
  return m;
}

inline double predict_point(const FittedModel& model, std::span<const double> features) {
  return model.predict_point(features);
}

inline std::pair<double, double> predict_quantiles(const FittedModel& model, std::span<const double> features, double lo_level,
                                                   double hi_level) {
  return model.predict_quantiles(features, lo_level, hi_level);
}

}  // namespace cia
