#pragma once

// Conformal interval arithmetic with symmetric calibration: the random
// cal/test split, per-group intersections, plain and stratified prediction,
// and the overlap measures for non-disjoint groups.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cia/core.hpp"
#include "cia/diagnostics.hpp"
#include "cia/random.hpp"
#include "cia/scoring.hpp"

namespace cia {

enum class SplitMode { bernoulli, balanced };

constexpr std::string_view to_string(SplitMode m) noexcept { return m == SplitMode::bernoulli ? "bernoulli" : "balanced"; }

/// Random calibration/test partition of `universe`.
///
/// bernoulli: every index lands on either side independently with
/// probability 1/2. balanced: a uniformly random partition into halves of
/// sizes floor(n/2) and ceil(n/2); which side receives the odd index is
/// itself a fair coin.
inline SplitAssignment symmetric_split(std::span<const SampleIndex> universe, std::uint64_t seed, SplitMode mode) {
  std::vector<SampleIndex> ids(universe.begin(), universe.end());
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  if (ids.empty()) throw InputError("cannot split an empty index universe");

  Rng rng(seed);
  SplitAssignment out;
  if (mode == SplitMode::bernoulli) {
    for (auto i : ids) ((rng() >> 63) != 0 ? out.cal : out.test).push_back(i);
  } else {
    std::vector<SampleIndex> shuffled = ids;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    std::size_t n_cal = shuffled.size() / 2;
    if (shuffled.size() % 2 == 1 && (rng() >> 63) != 0) ++n_cal;
    out.cal.assign(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(n_cal));
    out.test.assign(shuffled.begin() + static_cast<std::ptrdiff_t>(n_cal), shuffled.end());
    std::sort(out.cal.begin(), out.cal.end());
    std::sort(out.test.begin(), out.test.end());
  }
  return out;
}

/// Emits a diagnostic when the calibration side is smaller than the test side.
inline void warn_if_cal_smaller(const SplitAssignment& a) {
  if (a.cal.size() < a.test.size())
    Diagnostics::report(fmt::format("calibration side ({}) smaller than test side ({})", a.cal.size(), a.test.size()));
}

struct GroupSplitView {
  GroupId group_id = 0;
  std::vector<SampleIndex> cal_members;
  std::vector<SampleIndex> test_members;
};

/// Drops members outside `universe` and groups left empty.
inline std::vector<IndexGroup> restrict_groups(std::span<const IndexGroup> groups, std::span<const SampleIndex> universe) {
  std::vector<SampleIndex> u(universe.begin(), universe.end());
  std::sort(u.begin(), u.end());
  std::vector<IndexGroup> out;
  out.reserve(groups.size());
  for (const auto& g : groups) {
    IndexGroup r{g.group_id, {}};
    for (auto i : g.members)
      if (std::binary_search(u.begin(), u.end(), i)) r.members.push_back(i);
    if (!r.members.empty()) out.push_back(std::move(r));
  }
  return out;
}

/// S_k^cal = S_k intersect I_cal and S_k^test = S_k intersect I_test for every group.
inline std::vector<GroupSplitView> split_groups(std::span<const IndexGroup> groups, const SplitAssignment& assignment) {
  std::vector<GroupSplitView> views;
  views.reserve(groups.size());
  std::size_t empty_cal = 0;
  for (const auto& g : groups) {
    GroupSplitView v{g.group_id, {}, {}};
    for (auto i : g.members) {
      if (assignment.in_cal(i))
        v.cal_members.push_back(i);
      else if (assignment.in_test(i))
        v.test_members.push_back(i);
      else
        throw InputError(fmt::format("group {} member {} is outside the cal/test universe", g.group_id, i));
    }
    if (v.cal_members.empty()) ++empty_cal;
    views.push_back(std::move(v));
  }
  if (empty_cal > 0) Diagnostics::report(fmt::format("{} group(s) have an empty calibration side (score 0)", empty_cal));
  return views;
}

namespace detail {

inline std::size_t find_view(std::span<const GroupSplitView> views, GroupId target) {
  for (std::size_t p = 0; p < views.size(); ++p)
    if (views[p].group_id == target) return p;
  throw InputError(fmt::format("target group {} not present", target));
}

}  // namespace detail

/// Pools the calibration scores of every group except the
/// target, takes their conformal quantile and widens the target's test-side
/// sum by it.
inline IntervalPrediction cia_predict(std::span<const GroupSplitView> views, const SampleStore& samples, GroupId target_group,
                                      double alpha, ScoreKind kind) {
  check_alpha(alpha);
  const std::size_t target = detail::find_view(views, target_group);
  std::vector<double> pool;
  pool.reserve(views.size());
  for (std::size_t p = 0; p < views.size(); ++p)
    if (p != target) pool.push_back(group_score(samples, views[p].cal_members, kind));
  const Threshold q = conformal_quantile(pool, alpha, score_sign(kind));
  return interval_from_threshold(samples, views[target].test_members, q, kind, target_group);
}

/// Inclusive range of group sizes; `hi` equal to kOpenEnded means unbounded.
struct SizeRange {
  static constexpr std::size_t kOpenEnded = std::numeric_limits<std::size_t>::max();
  std::size_t lo = 1;
  std::size_t hi = kOpenEnded;

  [[nodiscard]] bool contains(std::size_t s) const noexcept { return lo <= s && s <= hi; }
};

/// Ordered partition C_1, C_2, ... of the positive integers plus the lower
/// bound on the pool size of the stratum a target falls in.
struct StrataSpec {
  std::vector<SizeRange> buckets{SizeRange{}};
  std::size_t min_bucket_count = 20;

  void validate() const {
    if (buckets.empty()) throw InputError("strata need at least one bucket");
    if (min_bucket_count < 1) throw InputError("min_bucket_count must be at least 1");
    if (buckets.front().lo != 1) throw InputError("first stratum must start at size 1");
    for (std::size_t j = 0; j < buckets.size(); ++j) {
      const auto& b = buckets[j];
      if (b.lo > b.hi) throw InputError(fmt::format("stratum {} is empty", j));
      if (j + 1 < buckets.size()) {
        if (b.hi == SizeRange::kOpenEnded || buckets[j + 1].lo != b.hi + 1)
          throw InputError(fmt::format("strata {} and {} are not contiguous", j, j + 1));
      }
    }
    if (buckets.back().hi != SizeRange::kOpenEnded) throw InputError("last stratum must be open-ended");
  }

  [[nodiscard]] std::optional<std::size_t> bucket_of(std::size_t size) const noexcept {
    for (std::size_t j = 0; j < buckets.size(); ++j)
      if (buckets[j].contains(size)) return j;
    return std::nullopt;
  }
};

/// Buckets closed at the given ascending upper bounds, then one open bucket.
inline StrataSpec strata_from_cuts(std::vector<std::size_t> cuts, std::size_t min_bucket_count = 20) {
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
  StrataSpec spec;
  spec.buckets.clear();
  spec.min_bucket_count = min_bucket_count;
  std::size_t lo = 1;
  for (auto c : cuts) {
    if (c < lo) continue;
    spec.buckets.push_back({lo, c});
    lo = c + 1;
  }
  spec.buckets.push_back({lo, SizeRange::kOpenEnded});
  spec.validate();
  return spec;
}

/// Quartile buckets of the observed positive calibration sizes (nearest-rank
/// 25/50/75th percentiles). The top quartile is left open-ended.
inline StrataSpec default_strata(std::span<const GroupSplitView> views, std::size_t min_bucket_count = 20) {
  std::vector<std::size_t> sizes;
  for (const auto& v : views)
    if (!v.cal_members.empty()) sizes.push_back(v.cal_members.size());
  if (sizes.empty()) return strata_from_cuts({}, min_bucket_count);
  std::sort(sizes.begin(), sizes.end());
  std::vector<std::size_t> cuts;
  for (double p : {0.25, 0.50, 0.75}) {
    const auto rank = static_cast<std::size_t>(std::ceil(p * static_cast<double>(sizes.size())));
    const std::size_t c = sizes[std::max<std::size_t>(rank, 1) - 1];
    if (c < sizes.back()) cuts.push_back(c);
  }
  return strata_from_cuts(std::move(cuts), min_bucket_count);
}

struct StratifiedPrediction {
  IntervalPrediction interval;
  std::size_t bucket = 0;       // stratum of |S^test_target|
  std::size_t merged_first = 0;  // bucket range actually pooled
  std::size_t merged_last = 0;
  std::size_t pool_size = 0;
};

namespace detail {

// Widens [first, last] toward the neighbour with more members until the
// pooled count reaches the bound or no neighbour remains. Ties go left.
inline std::pair<std::size_t, std::size_t> merge_strata(std::span<const std::size_t> counts, std::size_t bucket,
                                                        std::size_t min_count) {
  std::size_t first = bucket;
  std::size_t last = bucket;
  std::size_t pooled = counts[bucket];
  while (pooled < min_count && (first > 0 || last + 1 < counts.size())) {
    const bool has_left = first > 0;
    const bool has_right = last + 1 < counts.size();
    const bool go_right = has_right && (!has_left || counts[last + 1] > counts[first - 1]);
    if (go_right)
      pooled += counts[++last];
    else
      pooled += counts[--first];
  }
  return {first, last};
}

inline std::size_t target_bucket(const StrataSpec& strata, const GroupSplitView& target) {
  const std::size_t t = target.test_members.size();
  if (t == 0) throw InputError(fmt::format("target group {} has no test members to stratify on", target.group_id));
  return *strata.bucket_of(t);
}

}  // namespace detail

/// As cia_predict, but the pool only holds groups whose
/// calibration size falls in the stratum of the target's test size. Strata
/// with fewer than `min_bucket_count` pool members are merged with their
/// larger neighbour until the bound holds.
inline StratifiedPrediction stratified_cia_predict_detail(std::span<const GroupSplitView> views, const SampleStore& samples,
                                                          GroupId target_group, double alpha, ScoreKind kind,
                                                          const StrataSpec& strata) {
  check_alpha(alpha);
  strata.validate();
  const std::size_t target = detail::find_view(views, target_group);
  const std::size_t bucket = detail::target_bucket(strata, views[target]);

  std::vector<std::size_t> counts(strata.buckets.size(), 0);
  for (std::size_t p = 0; p < views.size(); ++p) {
    if (p == target) continue;
    if (auto b = strata.bucket_of(views[p].cal_members.size())) ++counts[*b];
  }
  const auto [first, last] = detail::merge_strata(counts, bucket, strata.min_bucket_count);
  const SizeRange range{strata.buckets[first].lo, strata.buckets[last].hi};

  std::vector<double> pool;
  for (std::size_t p = 0; p < views.size(); ++p) {
    if (p == target || !range.contains(views[p].cal_members.size())) continue;
    pool.push_back(group_score(samples, views[p].cal_members, kind));
  }
  const Threshold q = conformal_quantile(pool, alpha, score_sign(kind));
  return {interval_from_threshold(samples, views[target].test_members, q, kind, target_group), bucket, first, last,
          pool.size()};
}

inline IntervalPrediction stratified_cia_predict(std::span<const GroupSplitView> views, const SampleStore& samples,
                                                 GroupId target_group, double alpha, ScoreKind kind,
                                                 const StrataSpec& strata) {
  return stratified_cia_predict_detail(views, samples, target_group, alpha, kind, strata).interval;
}

/// Calibration scores of every view, in view order.
inline std::vector<GroupScore> score_groups(std::span<const GroupSplitView> views, const SampleStore& samples, ScoreKind kind) {
  std::vector<GroupScore> out;
  out.reserve(views.size());
  for (const auto& v : views) out.push_back({v.group_id, group_score(samples, v.cal_members, kind), v.cal_members.size()});
  return out;
}

/// Batch form of cia_predict / stratified_cia_predict for predicting many
/// targets from one split: scores are computed once, pools are sorted once,
/// and each target's own score is removed by rank arithmetic. Produces the
/// same intervals bit for bit.
class CiaCalibration {
 public:
  CiaCalibration(std::span<const GroupSplitView> views, const SampleStore& samples, ScoreKind kind,
                 std::optional<StrataSpec> strata = std::nullopt)
      : views_(views), samples_(&samples), kind_(kind), scores_(score_groups(views, samples, kind)), strata_(std::move(strata)) {
    std::vector<double> all;
    all.reserve(scores_.size());
    for (std::size_t p = 0; p < views.size(); ++p) {
      position_.emplace(views[p].group_id, p);
      all.push_back(scores_[p].score);
    }
    pool_ = ScorePool(std::move(all), score_sign(kind));
    if (strata_) build_strata();
  }

  [[nodiscard]] std::span<const GroupScore> scores() const noexcept { return scores_; }

  [[nodiscard]] IntervalPrediction predict(GroupId target_group, double alpha) const {
    const std::size_t t = position(target_group);
    const Threshold q = pool_.quantile_without(scores_[t].score, alpha);
    return interval_from_threshold(*samples_, views_[t].test_members, q, kind_, target_group);
  }

  [[nodiscard]] StratifiedPrediction predict_stratified(GroupId target_group, double alpha) const {
    if (!strata_) throw InputError("calibration was built without strata");
    const std::size_t t = position(target_group);
    const std::size_t bucket = detail::target_bucket(*strata_, views_[t]);
    const auto own = strata_->bucket_of(scores_[t].cal_size);

    std::vector<std::size_t> counts = bucket_counts_;
    if (own) --counts[*own];
    const auto [first, last] = detail::merge_strata(counts, bucket, strata_->min_bucket_count);
    const ScorePool& pool = range_pools_.at({first, last});
    const bool self_in_pool = own && first <= *own && *own <= last;
    const Threshold q = self_in_pool ? pool.quantile_without(scores_[t].score, alpha) : pool.quantile(alpha);
    return {interval_from_threshold(*samples_, views_[t].test_members, q, kind_, target_group), bucket, first, last, q.n};
  }

 private:
  [[nodiscard]] std::size_t position(GroupId g) const {
    auto it = position_.find(g);
    if (it == position_.end()) throw InputError(fmt::format("target group {} not present", g));
    return it->second;
  }

  void build_strata() {
    strata_->validate();
    const std::size_t buckets = strata_->buckets.size();
    bucket_counts_.assign(buckets, 0);
    std::vector<std::vector<double>> per_bucket(buckets);
    for (const auto& s : scores_) {
      if (auto b = strata_->bucket_of(s.cal_size)) {
        ++bucket_counts_[*b];
        per_bucket[*b].push_back(s.score);
      }
    }
    for (std::size_t first = 0; first < buckets; ++first) {
      std::vector<double> acc;
      for (std::size_t last = first; last < buckets; ++last) {
        acc.insert(acc.end(), per_bucket[last].begin(), per_bucket[last].end());
        range_pools_.emplace(std::pair{first, last}, ScorePool(acc, score_sign(kind_)));
      }
    }
  }

  std::span<const GroupSplitView> views_;
  const SampleStore* samples_;
  ScoreKind kind_;
  std::vector<GroupScore> scores_;
  std::optional<StrataSpec> strata_;
  std::unordered_map<GroupId, std::size_t> position_;
  ScorePool pool_;
  std::vector<std::size_t> bucket_counts_;
  std::map<std::pair<std::size_t, std::size_t>, ScorePool> range_pools_;
};

namespace detail {

struct OverlapIndex {
  std::vector<std::vector<SampleIndex>> members;     // per group, sorted unique
  std::unordered_map<SampleIndex, std::vector<std::size_t>> owners;  // sample -> groups holding it

  explicit OverlapIndex(std::span<const IndexGroup> groups) {
    if (groups.size() < 2) throw InputError("overlap measures need at least two groups");
    members.reserve(groups.size());
    for (std::size_t g = 0; g < groups.size(); ++g) {
      auto m = groups[g].members;
      std::sort(m.begin(), m.end());
      m.erase(std::unique(m.begin(), m.end()), m.end());
      for (auto i : m) owners[i].push_back(g);
      members.push_back(std::move(m));
    }
  }
};

}  // namespace detail

/// max over l of (1/(K+1)) * #{k != l : S_k intersects S_l}, where K+1 is the
/// total number of groups.
inline double overlap_delta_max(std::span<const IndexGroup> groups) {
  const detail::OverlapIndex index(groups);
  const std::size_t n = groups.size();
  std::vector<std::size_t> stamp(n, std::numeric_limits<std::size_t>::max());
  std::size_t best = 0;
  for (std::size_t l = 0; l < n; ++l) {
    std::size_t touching = 0;
    for (auto i : index.members[l])
      for (auto k : index.owners.at(i))
        if (k != l && stamp[k] != l) {
          stamp[k] = l;
          ++touching;
        }
    best = std::max(best, touching);
  }
  return static_cast<double>(best) / static_cast<double>(n);
}

/// Mean Jaccard similarity |S_k n S_l| / |S_k u S_l| over unordered pairs.
inline double overlap_delta_avg(std::span<const IndexGroup> groups) {
  const detail::OverlapIndex index(groups);
  const std::size_t n = groups.size();
  std::vector<std::size_t> shared(n, 0);
  std::vector<std::size_t> touched;
  double total = 0.0;
  for (std::size_t l = 0; l < n; ++l) {
    touched.clear();
    for (auto i : index.members[l])
      for (auto k : index.owners.at(i))
        if (k > l) {
          if (shared[k]++ == 0) touched.push_back(k);
        }
    for (auto k : touched) {
      const double inter = static_cast<double>(shared[k]);
      const double uni = static_cast<double>(index.members[l].size() + index.members[k].size()) - inter;
      total += inter / uni;
      shared[k] = 0;
    }
  }
  const double pairs = 0.5 * static_cast<double>(n) * static_cast<double>(n - 1);
  return total / pairs;
}

}  // namespace cia
