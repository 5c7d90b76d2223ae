#pragma once

// Comparison methods for sum intervals: group-sampling conformal
// prediction, normal approximations and Bonferroni-corrected per-sample
// intervals.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "cia/core.hpp"
#include "cia/diagnostics.hpp"
#include "cia/random.hpp"
#include "cia/scoring.hpp"

namespace cia {

/// Standard normal quantile z_p.
inline double normal_quantile(double p) {
  static const boost::math::normal_distribution<double> standard;
  return boost::math::quantile(standard, p);
}

/// Draws K disjoint groups of size m = |test| from the calibration samples
/// (without replacement), scores them with `kind` and uses their conformal
/// quantile as for CIA. `k_groups == 0` requests the maximum floor(|cal|/m);
/// larger requests are reduced to it with a diagnostic.
inline IntervalPrediction group_sampling_predict(std::span<const LabeledSample> cal_samples,
                                                 std::span<const LabeledSample> target_test_samples, double alpha,
                                                 ScoreKind kind, std::size_t k_groups, std::uint64_t seed,
                                                 GroupId group_id = 0) {
  check_alpha(alpha);
  const std::size_t m = target_test_samples.size();
  if (m == 0) throw InputError("group sampling needs a non-empty test group");
  const std::size_t available = cal_samples.size() / m;
  if (available == 0)
    throw InputError(fmt::format("group sampling needs at least {} calibration samples for groups of size {}, got {}", m, m,
                                 cal_samples.size()));
  if (k_groups == 0) {
    k_groups = available;
  } else if (k_groups > available) {
    Diagnostics::report(fmt::format("group sampling: K reduced from {} to {} (|cal|={}, m={})", k_groups, available,
                                    cal_samples.size(), m));
    k_groups = available;
  }

  std::vector<std::size_t> order(cal_samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<double> scores;
  scores.reserve(k_groups);
  for (std::size_t g = 0; g < k_groups; ++g) {
    scores.push_back(detail::accumulate_score(
        m, [&](std::size_t j) -> const LabeledSample& { return cal_samples[order[g * m + j]]; }, kind));
  }
  const Threshold q = conformal_quantile(scores, alpha, score_sign(kind));
  return interval_from_threshold(target_test_samples, q, kind, group_id);
}

/// sigma-hat with the unbiased 1/(n-1) normalisation.
inline double homoscedastic_sigma(std::span<const LabeledSample> cal_samples) {
  if (cal_samples.size() < 2) throw InputError("normal interval needs at least 2 calibration samples");
  double ss = 0.0;
  for (const auto& s : cal_samples) {
    const double r = field_value(s, Field::point_pred) - field_value(s, Field::label);
    ss += r * r;
  }
  return std::sqrt(ss / static_cast<double>(cal_samples.size() - 1));
}

/// centre +/- z_{1-alpha/2} * sd.
inline IntervalPrediction normal_interval(double centre, double sd, double alpha, GroupId group_id = 0) {
  check_alpha(alpha);
  const double half = normal_quantile(1.0 - alpha / 2.0) * sd;
  return {group_id, centre - half, centre + half, alpha};
}

/// Residuals i.i.d. N(0, sigma^2): sum yhat +/- z * sqrt(m) * sigma.
inline IntervalPrediction normal_homoscedastic_predict(std::span<const LabeledSample> cal_samples,
                                                       std::span<const LabeledSample> target_test_samples, double alpha,
                                                       GroupId group_id = 0) {
  const double sigma = homoscedastic_sigma(cal_samples);
  const double m = static_cast<double>(target_test_samples.size());
  return normal_interval(group_sum(target_test_samples, Field::point_pred), std::sqrt(m) * sigma, alpha, group_id);
}

/// Predicted (q25, q75) of one sample.
using IqrPredictor = std::function<std::pair<double, double>(const LabeledSample&)>;

/// Independent N(0, sigma_i^2) residuals with sigma_i = IQR_i / (z_.75 - z_.25);
/// the sum has sd sqrt(sum sigma_i^2). Inverted IQRs are clamped to 0.
inline IntervalPrediction normal_hetero_iqr_predict(std::span<const LabeledSample> target_test_samples, double alpha,
                                                    const IqrPredictor& predict_iqr, GroupId group_id = 0) {
  static const double z_spread = normal_quantile(0.75) - normal_quantile(0.25);
  double var = 0.0;
  for (const auto& s : target_test_samples) {
    const auto [q25, q75] = predict_iqr(s);
    double sigma = (q75 - q25) / z_spread;
    if (sigma < 0.0) {
      Diagnostics::report(fmt::format("sample {}: predicted q75 < q25, sigma clamped to 0", s.index));
      sigma = 0.0;
    }
    var += sigma * sigma;
  }
  return normal_interval(group_sum(target_test_samples, Field::point_pred), std::sqrt(var), alpha, group_id);
}

/// Per-sample split (or CQR) intervals at level alpha/m from all calibration
/// samples individually, added endpoint-wise. For CQR the caller supplies
/// quantile predictions at the matching alpha/(2m) levels.
inline IntervalPrediction bonferroni_predict(std::span<const LabeledSample> cal_samples,
                                             std::span<const LabeledSample> target_test_samples, double alpha, ScoreKind kind,
                                             GroupId group_id = 0) {
  check_alpha(alpha);
  if (cal_samples.empty()) throw InputError("Bonferroni interval needs at least one calibration sample");
  const std::size_t m = std::max<std::size_t>(target_test_samples.size(), 1);
  const double level = alpha / static_cast<double>(m);

  std::vector<double> scores;
  scores.reserve(cal_samples.size());
  for (const auto& s : cal_samples) scores.push_back(group_score(std::span(&s, 1), kind));
  const Threshold q = conformal_quantile(scores, level, score_sign(kind));

  IntervalPrediction out{group_id, -kInf, kInf, alpha};
  if (q.infinite()) return out;
  double lo = 0.0;
  double hi = 0.0;
  for (const auto& s : target_test_samples) {
    if (kind == ScoreKind::split) {
      const double yhat = field_value(s, Field::point_pred);
      lo += yhat - q.value;
      hi += yhat + q.value;
    } else {
      lo += field_value(s, Field::quant_lo) - q.value;
      hi += field_value(s, Field::quant_hi) + q.value;
    }
  }
  out.lower = lo;
  out.upper = hi;
  if (out.lower > out.upper) out.lower = out.upper = 0.5 * (lo + hi);
  return out;
}

}  // namespace cia
