#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <fmt/format.h>

namespace cia {

/// Raised when a caller violates an operation's precondition (missing
/// fields, malformed input, out-of-range parameters).
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr double kInf = std::numeric_limits<double>::infinity();

using SampleIndex = std::int64_t;
using GroupId = std::int64_t;

/// One data row. The label is absent for rows whose response is unknown;
/// predictions are absent until a model has been applied.
struct LabeledSample {
  SampleIndex index = 0;
  std::vector<double> features;
  std::optional<double> label;
  std::optional<double> point_pred;
  std::optional<double> quant_lo;
  std::optional<double> quant_hi;
};

enum class Field { label, point_pred, quant_lo, quant_hi };

constexpr std::string_view to_string(Field f) noexcept {
  switch (f) {
    case Field::label: return "label";
    case Field::point_pred: return "point_pred";
    case Field::quant_lo: return "quant_lo";
    case Field::quant_hi: return "quant_hi";
  }
  return "?";
}

inline const std::optional<double>& field_slot(const LabeledSample& s, Field f) noexcept {
  switch (f) {
    case Field::label: return s.label;
    case Field::point_pred: return s.point_pred;
    case Field::quant_lo: return s.quant_lo;
    case Field::quant_hi: return s.quant_hi;
  }
  return s.label;
}

inline double field_value(const LabeledSample& s, Field f) {
  const auto& slot = field_slot(s, f);
  if (!slot) throw InputError(fmt::format("sample {} has no {}", s.index, to_string(f)));
  return *slot;
}

/// Throws if the quantile band is inverted.
inline void validate(const LabeledSample& s) {
  if (s.quant_lo && s.quant_hi && *s.quant_lo > *s.quant_hi)
    throw InputError(fmt::format("sample {}: quant_lo {} > quant_hi {}", s.index, *s.quant_lo, *s.quant_hi));
}

/// One index set S_k. Members are kept sorted and unique.
struct IndexGroup {
  GroupId group_id = 0;
  std::vector<SampleIndex> members;
};

inline IndexGroup make_group(GroupId id, std::vector<SampleIndex> members) {
  std::sort(members.begin(), members.end());
  members.erase(std::unique(members.begin(), members.end()), members.end());
  if (members.empty()) throw InputError(fmt::format("group {} has no members", id));
  return IndexGroup{id, std::move(members)};
}

/// Partition of the held-out indices into calibration and test sides.
/// Both vectors are sorted.
struct SplitAssignment {
  std::vector<SampleIndex> cal;
  std::vector<SampleIndex> test;

  [[nodiscard]] bool in_cal(SampleIndex i) const { return std::binary_search(cal.begin(), cal.end(), i); }
  [[nodiscard]] bool in_test(SampleIndex i) const { return std::binary_search(test.begin(), test.end(), i); }
  [[nodiscard]] std::size_t size() const noexcept { return cal.size() + test.size(); }
};

/// Calibration score of one group. Split scores are non-negative; CQR scores
/// may be negative.
struct GroupScore {
  GroupId group_id = 0;
  double score = 0.0;
  std::size_t cal_size = 0;
};

struct Threshold {
  double value = kInf;
  double alpha = 0.1;
  std::size_t n = 0;

  [[nodiscard]] bool infinite() const noexcept { return std::isinf(value); }
};

struct IntervalPrediction {
  GroupId group_id = 0;
  double lower = -kInf;
  double upper = kInf;
  double alpha = 0.1;

  [[nodiscard]] bool finite() const noexcept { return std::isfinite(lower) && std::isfinite(upper); }
  [[nodiscard]] double width() const noexcept { return finite() ? upper - lower : kInf; }
  [[nodiscard]] bool contains(double y) const noexcept { return lower <= y && y <= upper; }
};

inline void check_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw InputError(fmt::format("alpha must lie in (0,1), got {}", alpha));
}

/// Rank k = ceil((1+n)(1-alpha)) of the conformal order statistic. The
/// product is nudged down by 1e-9 before the ceiling so that values which
/// are integral up to rounding (n=9, alpha=0.1) are not bumped up by one.
inline std::size_t conformal_rank(std::size_t n, double alpha) {
  check_alpha(alpha);
  const double x = (1.0 + static_cast<double>(n)) * (1.0 - alpha);
  const double k = std::ceil(x - 1e-9);
  return k < 1.0 ? std::size_t{1} : static_cast<std::size_t>(k);
}

enum class ScoreSign { non_negative, any };

inline void check_scores(std::span<const double> scores, ScoreSign sign) {
  for (double s : scores) {
    if (!std::isfinite(s)) throw InputError("calibration score is not finite");
    if (sign == ScoreSign::non_negative && s < 0.0)
      throw InputError(fmt::format("calibration score {} is negative", s));
  }
}

/// The ceil((1+n)(1-alpha))-th smallest score, or +inf when that rank
/// exceeds n (the appended infinity sentinel). Duplicates count separately.
inline Threshold conformal_quantile(std::span<const double> scores, double alpha,
                                    ScoreSign sign = ScoreSign::non_negative) {
  check_scores(scores, sign);
  const std::size_t n = scores.size();
  const std::size_t k = conformal_rank(n, alpha);
  if (k > n) return Threshold{kInf, alpha, n};
  std::vector<double> work(scores.begin(), scores.end());
  auto kth = work.begin() + static_cast<std::ptrdiff_t>(k - 1);
  std::nth_element(work.begin(), kth, work.end());
  return Threshold{*kth, alpha, n};
}

/// Sorted calibration scores supporting repeated quantile queries, including
/// leave-one-out queries that drop a single pool member.
class ScorePool {
 public:
  ScorePool() = default;
  explicit ScorePool(std::vector<double> scores, ScoreSign sign = ScoreSign::non_negative)
      : sorted_(std::move(scores)) {
    check_scores(sorted_, sign);
    std::sort(sorted_.begin(), sorted_.end());
  }

  [[nodiscard]] std::size_t size() const noexcept { return sorted_.size(); }
  [[nodiscard]] std::span<const double> sorted() const noexcept { return sorted_; }

  [[nodiscard]] Threshold quantile(double alpha) const {
    const std::size_t n = sorted_.size();
    const std::size_t k = conformal_rank(n, alpha);
    if (k > n) return Threshold{kInf, alpha, n};
    return Threshold{sorted_[k - 1], alpha, n};
  }

  /// Quantile of the pool with one copy of `member` removed. `member` must
  /// be a value present in the pool.
  [[nodiscard]] Threshold quantile_without(double member, double alpha) const {
    auto it = std::lower_bound(sorted_.begin(), sorted_.end(), member);
    if (it == sorted_.end() || *it != member) throw InputError("leave-one-out value is not in the score pool");
    const auto removed = static_cast<std::size_t>(it - sorted_.begin());
    const std::size_t n = sorted_.size() - 1;
    const std::size_t k = conformal_rank(n, alpha);
    if (k > n) return Threshold{kInf, alpha, n};
    return Threshold{k - 1 < removed ? sorted_[k - 1] : sorted_[k], alpha, n};
  }

 private:
  std::vector<double> sorted_;
};

/// Left-to-right arithmetic sum of one field; the empty sum is 0.
inline double group_sum(std::span<const LabeledSample> samples, Field field) {
  double total = 0.0;
  for (const auto& s : samples) total += field_value(s, field);
  return total;
}

/// Samples addressable by their index.
class SampleStore {
 public:
  SampleStore() = default;
  explicit SampleStore(std::vector<LabeledSample> samples) : samples_(std::move(samples)) {
    position_.reserve(samples_.size());
    for (std::size_t p = 0; p < samples_.size(); ++p) {
      validate(samples_[p]);
      if (!position_.emplace(samples_[p].index, p).second)
        throw InputError(fmt::format("duplicate sample index {}", samples_[p].index));
    }
  }

  [[nodiscard]] const LabeledSample& at(SampleIndex i) const {
    auto it = position_.find(i);
    if (it == position_.end()) throw InputError(fmt::format("unknown sample index {}", i));
    return samples_[it->second];
  }
  [[nodiscard]] bool contains(SampleIndex i) const { return position_.count(i) != 0; }
  [[nodiscard]] std::size_t position(SampleIndex i) const {
    auto it = position_.find(i);
    if (it == position_.end()) throw InputError(fmt::format("unknown sample index {}", i));
    return it->second;
  }
  [[nodiscard]] std::span<const LabeledSample> samples() const noexcept { return samples_; }
  [[nodiscard]] std::size_t size() const noexcept { return samples_.size(); }

  /// Same summation order as group_sum over the gathered samples.
  [[nodiscard]] double sum(std::span<const SampleIndex> members, Field field) const {
    double total = 0.0;
    for (auto i : members) total += field_value(at(i), field);
    return total;
  }

  [[nodiscard]] std::vector<LabeledSample> gather(std::span<const SampleIndex> members) const {
    std::vector<LabeledSample> out;
    out.reserve(members.size());
    for (auto i : members) out.push_back(at(i));
    return out;
  }

 private:
  std::vector<LabeledSample> samples_;
  std::unordered_map<SampleIndex, std::size_t> position_;
};

}  // namespace cia
