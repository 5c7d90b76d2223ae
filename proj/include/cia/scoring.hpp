#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string_view>

#include "cia/core.hpp"

namespace cia {

enum class ScoreKind { split, cqr };

constexpr std::string_view to_string(ScoreKind k) noexcept { return k == ScoreKind::split ? "split" : "cqr"; }

constexpr ScoreSign score_sign(ScoreKind k) noexcept {
  return k == ScoreKind::split ? ScoreSign::non_negative : ScoreSign::any;
}

namespace detail {

// All group scores go through here so that the same members always produce
// the same bits, whichever container they come from.
template <class Get>
double accumulate_score(std::size_t n, Get&& get, ScoreKind kind) {
  if (kind == ScoreKind::split) {
    double residual = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const LabeledSample& s = get(j);
      residual += field_value(s, Field::label) - field_value(s, Field::point_pred);
    }
    return std::abs(residual);
  }
  double below = 0.0;
  double above = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const LabeledSample& s = get(j);
    const double y = field_value(s, Field::label);
    below += field_value(s, Field::quant_lo) - y;
    above += y - field_value(s, Field::quant_hi);
  }
  return std::max(below, above);
}

}  // namespace detail

/// |sum (y_i - yhat_i)| over the group.
inline double split_group_score(std::span<const LabeledSample> samples) {
  return detail::accumulate_score(samples.size(), [&](std::size_t j) -> const LabeledSample& { return samples[j]; },
                                  ScoreKind::split);
}

/// max{ sum(lo_i - y_i), sum(y_i - hi_i) }. Negative when every label sits
/// strictly inside its band; not clipped.
inline double cqr_group_score(std::span<const LabeledSample> samples) {
  return detail::accumulate_score(samples.size(), [&](std::size_t j) -> const LabeledSample& { return samples[j]; },
                                  ScoreKind::cqr);
}

inline double group_score(std::span<const LabeledSample> samples, ScoreKind kind) {
  return detail::accumulate_score(samples.size(), [&](std::size_t j) -> const LabeledSample& { return samples[j]; }, kind);
}

/// Score of the members of a store, in member order.
inline double group_score(const SampleStore& store, std::span<const SampleIndex> members, ScoreKind kind) {
  return detail::accumulate_score(members.size(), [&](std::size_t j) -> const LabeledSample& { return store.at(members[j]); },
                                  kind);
}

namespace detail {

inline IntervalPrediction widen(double lo, double hi, const Threshold& q, GroupId group_id) {
  IntervalPrediction out{group_id, -kInf, kInf, q.alpha};
  if (!q.infinite()) {
    out.lower = lo - q.value;
    out.upper = hi + q.value;
  }
  // A very negative CQR threshold can invert the band; collapse to its midpoint.
  if (out.lower > out.upper) out.lower = out.upper = 0.5 * (out.lower + out.upper);
  return out;
}

}  // namespace detail

/// Interval for a test-side sum given a threshold: centred on the point sum
/// for split scores, widened quantile sums for CQR.
inline IntervalPrediction interval_from_threshold(const SampleStore& store, std::span<const SampleIndex> test_members,
                                                  const Threshold& q, ScoreKind kind, GroupId group_id) {
  if (kind == ScoreKind::split) {
    const double centre = store.sum(test_members, Field::point_pred);
    return detail::widen(centre, centre, q, group_id);
  }
  return detail::widen(store.sum(test_members, Field::quant_lo), store.sum(test_members, Field::quant_hi), q, group_id);
}

inline IntervalPrediction interval_from_threshold(std::span<const LabeledSample> test_samples, const Threshold& q,
                                                  ScoreKind kind, GroupId group_id) {
  if (kind == ScoreKind::split) {
    const double centre = group_sum(test_samples, Field::point_pred);
    return detail::widen(centre, centre, q, group_id);
  }
  return detail::widen(group_sum(test_samples, Field::quant_lo), group_sum(test_samples, Field::quant_hi), q, group_id);
}

}  // namespace cia
