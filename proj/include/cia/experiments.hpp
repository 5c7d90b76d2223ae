#pragma once

// Monte-Carlo harness. Each repetition draws a fresh calibration/test split
// of the held-out rows, predicts the test-side sum of every group with a
// non-empty test side using each enabled method, and records coverage of the
// true sum and interval width. Results are averaged within a repetition and
// then summarised across repetitions.

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cia/baselines.hpp"
#include "cia/core.hpp"
#include "cia/csv.hpp"
#include "cia/diagnostics.hpp"
#include "cia/engine.hpp"
#include "cia/graph.hpp"
#include "cia/models.hpp"
#include "cia/random.hpp"
#include "cia/scoring.hpp"

namespace cia {

enum class Method {
  cia_split,
  cia_cqr,
  cia_split_strat,
  cia_cqr_strat,
  group_split,
  group_cqr,
  normal_homo,
  normal_hetero,
  bonf_split,
  bonf_cqr,
};

inline constexpr std::array<Method, 10> kAllMethods{
    Method::cia_split,   Method::cia_cqr,   Method::cia_split_strat, Method::cia_cqr_strat, Method::group_split,
    Method::group_cqr,   Method::normal_homo, Method::normal_hetero, Method::bonf_split,    Method::bonf_cqr,
};

constexpr std::string_view to_string(Method m) noexcept {
  switch (m) {
    case Method::cia_split: return "cia_split";
    case Method::cia_cqr: return "cia_cqr";
    case Method::cia_split_strat: return "cia_split_strat";
    case Method::cia_cqr_strat: return "cia_cqr_strat";
    case Method::group_split: return "group_split";
    case Method::group_cqr: return "group_cqr";
    case Method::normal_homo: return "normal_homo";
    case Method::normal_hetero: return "normal_hetero";
    case Method::bonf_split: return "bonf_split";
    case Method::bonf_cqr: return "bonf_cqr";
  }
  return "?";
}

inline Method parse_method(std::string_view s) {
  for (auto m : kAllMethods)
    if (to_string(m) == s) return m;
  throw InputError(fmt::format("unknown method '{}'", s));
}

/// "all", "cia" (the four CIA variants) or a comma separated list of ids.
inline std::vector<Method> parse_methods(std::string_view list) {
  if (list == "all") return {kAllMethods.begin(), kAllMethods.end()};
  if (list == "cia") return {Method::cia_split, Method::cia_cqr, Method::cia_split_strat, Method::cia_cqr_strat};
  std::vector<Method> out;
  std::size_t start = 0;
  while (start <= list.size()) {
    const std::size_t end = std::min(list.find(',', start), list.size());
    const auto item = detail::trim(list.substr(start, end - start));
    if (!item.empty()) {
      const Method m = parse_method(item);
      if (std::find(out.begin(), out.end(), m) == out.end()) out.push_back(m);
    }
    start = end + 1;
  }
  if (out.empty()) throw InputError("no methods selected");
  return out;
}

constexpr bool uses_cqr(Method m) noexcept {
  return m == Method::cia_cqr || m == Method::cia_cqr_strat || m == Method::group_cqr || m == Method::bonf_cqr;
}

constexpr bool is_stratified(Method m) noexcept { return m == Method::cia_split_strat || m == Method::cia_cqr_strat; }

struct ExperimentConfig {
  std::vector<double> alphas{0.1};
  std::size_t reps = 100;
  std::uint64_t seed = 7;
  std::vector<Method> methods{kAllMethods.begin(), kAllMethods.end()};
  double train_frac = 0.7;
  SplitMode split_mode = SplitMode::balanced;
  ModelKind model = ModelKind::linear_ls;
  ModelOptions model_options{};
  std::size_t quantile_neighbors = 50;  // knn quantile regressor used by CQR, IQR and Bonferroni-CQR
  std::size_t strata_min_count = 20;
  bool resample_train = false;
  bool keep_target_records = false;
  std::size_t threads = 0;  // 0: CIA_THREADS or hardware concurrency

  void validate() const {
    if (alphas.empty()) throw InputError("at least one alpha is required");
    for (double a : alphas) check_alpha(a);
    if (reps < 1) throw InputError("reps must be at least 1");
    if (!(train_frac > 0.0 && train_frac < 1.0)) throw InputError(fmt::format("train_frac must lie in (0,1), got {}", train_frac));
    if (methods.empty()) throw InputError("no methods selected");
    if (quantile_neighbors < 1) throw InputError("quantile_neighbors must be at least 1");
    if (strata_min_count < 1) throw InputError("strata_min_count must be at least 1");
  }
};

struct MethodResult {
  Method method = Method::cia_split;
  double alpha = 0.1;
  double mean_coverage = 0.0;
  double coverage_std = 0.0;
  double mean_size = 0.0;  // +inf when no repetition produced a finite interval
  double size_std = 0.0;
  std::size_t reps = 0;
  std::size_t infinite_interval_count = 0;
};

struct TargetRecord {
  std::size_t rep = 0;
  Method method = Method::cia_split;
  double alpha = 0.1;
  GroupId group_id = 0;
  std::size_t test_size = 0;
  std::size_t stratum = 0;  // stratified methods only
  bool covered = false;
  double width = 0.0;
};

struct ExperimentOutput {
  std::vector<MethodResult> results;
  std::vector<TargetRecord> records;
  std::map<std::string, std::size_t> failures;  // message -> number of (rep, method, alpha) cells
  std::vector<double> delta_avg;                // per repetition, path experiments only
  std::vector<double> delta_max;
};

/// Rows of a tabular data set. Row position equals sample index.
struct Dataset {
  std::vector<LabeledSample> samples;
  std::vector<std::string> feature_names;
  std::map<std::string, std::vector<std::string>, std::less<>> categorical;  // raw text of grouping columns
  std::vector<bool> fixed_train;  // when non-empty, these rows are the training set
  double label_mean = 0.0;
  double label_sd = 1.0;
};

inline std::size_t resolve_threads(std::size_t requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("CIA_THREADS")) {
    if (auto v = parse_int(env); v && *v > 0) return static_cast<std::size_t>(*v);
  }
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

/// Reads a CSV with a header. Labels are standardised to mean 0 and
/// (population) sd 1. Numeric columns other than the label become features;
/// grouping columns are also kept as text for group construction.
inline Dataset load_tabular_csv(std::istream& in, std::string_view label_column, std::span<const std::string> grouping_columns) {
  const CsvTable table = parse_csv(in);
  const auto label_col = table.column(label_column);
  if (!label_col) throw InputError(fmt::format("label column '{}' not found", label_column));
  std::vector<std::size_t> group_cols;
  for (const auto& g : grouping_columns) {
    const auto c = table.column(g);
    if (!c) throw InputError(fmt::format("grouping column '{}' not found", g));
    group_cols.push_back(*c);
  }

  std::vector<bool> numeric(table.header.size(), true);
  for (const auto& row : table.rows)
    for (std::size_t c = 0; c < row.size(); ++c)
      if (numeric[c] && !parse_double(row[c])) numeric[c] = false;

  Dataset ds;
  std::vector<std::size_t> feature_cols;
  std::vector<std::string> skipped;
  for (std::size_t c = 0; c < table.header.size(); ++c) {
    if (c == *label_col) continue;
    if (numeric[c]) {
      feature_cols.push_back(c);
      ds.feature_names.push_back(table.header[c]);
    } else if (std::find(group_cols.begin(), group_cols.end(), c) == group_cols.end()) {
      skipped.push_back(table.header[c]);
    }
  }
  if (!skipped.empty()) Diagnostics::report(fmt::format("{} non-numeric column(s) not used as features", skipped.size()));

  std::vector<double> labels;
  labels.reserve(table.rows.size());
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const auto y = parse_double(row[*label_col]);
    if (!y) throw ParseError(table.line_of_row[r], fmt::format("label '{}' is not numeric", row[*label_col]));
    labels.push_back(*y);
    LabeledSample s;
    s.index = static_cast<SampleIndex>(r);
    for (auto c : feature_cols) s.features.push_back(*parse_double(row[c]));
    ds.samples.push_back(std::move(s));
  }
  for (std::size_t g = 0; g < group_cols.size(); ++g) {
    auto& col = ds.categorical[grouping_columns[g]];
    for (const auto& row : table.rows) col.emplace_back(detail::trim(row[group_cols[g]]));
  }

  const double n = static_cast<double>(labels.size());
  if (!labels.empty()) {
    const double mean = std::accumulate(labels.begin(), labels.end(), 0.0) / n;
    double var = 0.0;
    for (double y : labels) var += (y - mean) * (y - mean);
    const double sd = std::sqrt(var / n);
    ds.label_mean = mean;
    ds.label_sd = sd;
    if (!(sd > 0.0)) Diagnostics::report("label column is constant; standardised labels set to 0");
    for (std::size_t r = 0; r < labels.size(); ++r) ds.samples[r].label = sd > 0.0 ? (labels[r] - mean) / sd : 0.0;
  }
  return ds;
}

inline Dataset load_tabular_csv(const std::string& path, std::string_view label_column,
                                std::span<const std::string> grouping_columns) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError(fmt::format("cannot open '{}'", path));
  return load_tabular_csv(in, label_column, grouping_columns);
}

struct GroupingOptions {
  std::size_t discretize_bins = 0;  // 0: non-categorical columns are rejected
};

/// One group per distinct combination of the grouping columns, over the rows
/// in `universe` (all rows when empty). Integer-valued or non-numeric columns
/// are categorical; other numeric columns need equal-frequency binning.
inline std::vector<IndexGroup> build_groups_by_category(const Dataset& ds, std::span<const std::string> columns,
                                                        std::span<const SampleIndex> universe = {},
                                                        const GroupingOptions& options = {}) {
  if (columns.empty()) throw InputError("at least one grouping column is required");
  const std::size_t n = ds.samples.size();
  std::vector<std::vector<std::string>> keys(n);
  for (const auto& name : columns) {
    const auto it = ds.categorical.find(name);
    if (it == ds.categorical.end()) throw InputError(fmt::format("grouping column '{}' not found", name));
    const auto& col = it->second;
    bool all_numeric = true;
    bool all_integer = true;
    std::vector<double> values(col.size());
    for (std::size_t r = 0; r < col.size(); ++r) {
      const auto v = parse_double(col[r]);
      if (!v) {
        all_numeric = false;
        break;
      }
      values[r] = *v;
      if (*v != std::floor(*v)) all_integer = false;
    }
    if (!all_numeric || all_integer) {
      for (std::size_t r = 0; r < n; ++r) keys[r].push_back(col[r]);
      continue;
    }
    if (options.discretize_bins == 0)
      throw InputError(fmt::format("grouping column '{}' is not categorical; request discretization", name));
    std::vector<double> sorted = values;
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> cuts;
    for (std::size_t j = 1; j < options.discretize_bins; ++j) cuts.push_back(sorted[j * sorted.size() / options.discretize_bins]);
    for (std::size_t r = 0; r < n; ++r) {
      const auto bin = static_cast<std::size_t>(std::upper_bound(cuts.begin(), cuts.end(), values[r]) - cuts.begin());
      keys[r].push_back(fmt::format("bin{}", bin));
    }
  }

  std::map<std::vector<std::string>, std::vector<SampleIndex>> by_key;
  auto add = [&](SampleIndex i) {
    if (i < 0 || static_cast<std::size_t>(i) >= n) throw InputError(fmt::format("row {} outside the data set", i));
    by_key[keys[static_cast<std::size_t>(i)]].push_back(i);
  };
  if (universe.empty()) {
    for (std::size_t r = 0; r < n; ++r) add(static_cast<SampleIndex>(r));
  } else {
    for (auto i : universe) add(i);
  }
  std::vector<IndexGroup> groups;
  GroupId next = 0;
  for (auto& [key, members] : by_key) groups.push_back(make_group(next++, std::move(members)));
  return groups;
}

enum class NoiseKind { gaussian, student_t };

inline NoiseKind parse_noise_kind(std::string_view s) {
  if (s == "gaussian") return NoiseKind::gaussian;
  if (s == "student_t" || s == "student_t3" || s == "t") return NoiseKind::student_t;
  throw InputError(fmt::format("unknown noise kind '{}'", s));
}

struct SyntheticConfig {
  std::size_t n_samples = 5000;
  std::size_t n_groups = 300;
  NoiseKind noise = NoiseKind::gaussian;  // student_t has 3 degrees of freedom
  double noise_scale = 1.0;
  std::vector<double> coefficients{1.0, -0.5, 0.25};
  double group_effect_sd = 0.0;  // latent per-group shift shared by all members
  // When set, group sizes are drawn uniformly from this range and all grouped
  // rows are held out; `n_samples` extra ungrouped rows form a fixed training set.
  std::optional<std::pair<std::size_t, std::size_t>> group_size_range;
  std::uint64_t seed = 7;
};

struct SyntheticData {
  Dataset dataset;
  std::vector<IndexGroup> groups;
};

/// y = coefficients . x + u_group + noise with x ~ N(0, I). Groups are a
/// uniformly random disjoint partition, so they are exchangeable.
inline SyntheticData generate_synthetic(const SyntheticConfig& cfg) {
  Rng rng = make_rng(cfg.seed, {tag(Stream::synthetic)});
  std::normal_distribution<double> std_normal(0.0, 1.0);
  std::student_t_distribution<double> student(3.0);

  std::vector<std::int64_t> group_of;  // -1: ungrouped training row
  std::size_t n_groups = cfg.n_groups;
  if (cfg.group_size_range) {
    const auto [lo, hi] = *cfg.group_size_range;
    if (lo < 1 || lo > hi) throw InputError("group size range must satisfy 1 <= lo <= hi");
    if (n_groups < 1) throw InputError("n_groups must be at least 1");
    std::uniform_int_distribution<std::size_t> size(lo, hi);
    for (std::size_t g = 0; g < n_groups; ++g) group_of.insert(group_of.end(), size(rng), static_cast<std::int64_t>(g));
    group_of.insert(group_of.end(), cfg.n_samples, -1);
  } else {
    if (n_groups < 1 || n_groups > cfg.n_samples) throw InputError("need 1 <= n_groups <= n_samples");
    std::vector<std::size_t> order(cfg.n_samples);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    group_of.assign(cfg.n_samples, 0);
    std::uniform_int_distribution<std::size_t> any(0, n_groups - 1);
    for (std::size_t p = 0; p < order.size(); ++p)
      group_of[order[p]] = static_cast<std::int64_t>(p < n_groups ? p : any(rng));
  }

  std::vector<double> effect(n_groups, 0.0);
  if (cfg.group_effect_sd > 0.0)
    for (auto& u : effect) u = cfg.group_effect_sd * std_normal(rng);

  SyntheticData out;
  const std::size_t d = cfg.coefficients.size();
  for (std::size_t j = 0; j < d; ++j) out.dataset.feature_names.push_back(fmt::format("x{}", j));
  std::vector<std::vector<SampleIndex>> members(n_groups);
  for (std::size_t r = 0; r < group_of.size(); ++r) {
    LabeledSample s;
    s.index = static_cast<SampleIndex>(r);
    double y = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      s.features.push_back(std_normal(rng));
      y += cfg.coefficients[j] * s.features.back();
    }
    const double eps = cfg.noise == NoiseKind::gaussian ? std_normal(rng) : student(rng);
    y += cfg.noise_scale * eps;
    if (group_of[r] >= 0) {
      y += effect[static_cast<std::size_t>(group_of[r])];
      members[static_cast<std::size_t>(group_of[r])].push_back(s.index);
    }
    s.label = y;
    out.dataset.samples.push_back(std::move(s));
  }
  if (cfg.group_size_range)
    for (auto g : group_of) out.dataset.fixed_train.push_back(g < 0);
  for (std::size_t g = 0; g < n_groups; ++g) out.groups.push_back(make_group(static_cast<GroupId>(g), std::move(members[g])));
  return out;
}

/// Per-target coverage indicators and widths of one (rep, method, alpha)
/// cell. Infinite intervals count as covered and are left out of the width.
class CoverageTally {
 public:
  bool add(const IntervalPrediction& iv, double truth) {
    const bool hit = iv.contains(truth);
    ++targets_;
    covered_ += hit ? 1 : 0;
    if (iv.finite()) {
      ++finite_;
      width_total_ += iv.width();
    }
    return hit;
  }

  [[nodiscard]] std::size_t targets() const noexcept { return targets_; }
  [[nodiscard]] std::size_t infinite() const noexcept { return targets_ - finite_; }
  [[nodiscard]] double coverage() const {
    if (targets_ == 0) throw InputError("coverage of an empty set of targets");
    return static_cast<double>(covered_) / static_cast<double>(targets_);
  }
  /// NaN when no interval was finite.
  [[nodiscard]] double mean_finite_width() const noexcept {
    return finite_ > 0 ? width_total_ / static_cast<double>(finite_) : std::numeric_limits<double>::quiet_NaN();
  }

 private:
  std::size_t targets_ = 0;
  std::size_t covered_ = 0;
  std::size_t finite_ = 0;
  double width_total_ = 0.0;
};

namespace detail {

// Predictions on the held-out rows for one training set.
struct FittedUniverse {
  std::vector<SampleIndex> universe;              // sorted
  SampleStore point;                              // label + point prediction
  std::vector<std::vector<double>> neighbours;    // sorted knn labels, by point.position()
  std::vector<SampleStore> cqr;                   // per alpha: quantiles at alpha/2 and 1 - alpha/2
};

inline LabeledSample strip(const LabeledSample& s) {
  LabeledSample out;
  out.index = s.index;
  out.label = s.label;
  out.point_pred = s.point_pred;
  out.quant_lo = s.quant_lo;
  out.quant_hi = s.quant_hi;
  return out;
}

inline SampleStore with_quantiles(const SampleStore& point, const std::vector<std::vector<double>>& neighbours, double lo,
                                  double hi) {
  std::vector<LabeledSample> rows;
  rows.reserve(point.size());
  for (std::size_t p = 0; p < point.size(); ++p) {
    LabeledSample s = strip(point.samples()[p]);
    s.quant_lo = quantile_of_sorted(neighbours[p], lo);
    s.quant_hi = quantile_of_sorted(neighbours[p], hi);
    rows.push_back(std::move(s));
  }
  return SampleStore(std::move(rows));
}

inline FittedUniverse fit_universe(std::span<const LabeledSample> rows, const std::vector<bool>& is_train,
                                   const ExperimentConfig& cfg) {
  std::vector<LabeledSample> train;
  std::vector<const LabeledSample*> held;
  for (std::size_t r = 0; r < rows.size(); ++r) (is_train[r] ? (void)train.push_back(rows[r]) : held.push_back(&rows[r]));
  if (train.empty()) throw InputError("training set is empty");
  if (held.empty()) throw InputError("no rows left for calibration and testing");

  const FittedModel point_model = fit(train, cfg.model, cfg.model_options);
  ModelOptions qopt;
  qopt.k_neighbors = cfg.quantile_neighbors;
  const FittedModel quantile_model = fit(train, ModelKind::knn, qopt);

  FittedUniverse fu;
  std::vector<LabeledSample> point_rows;
  point_rows.reserve(held.size());
  for (const auto* s : held) {
    LabeledSample p;
    p.index = s->index;
    p.label = field_value(*s, Field::label);
    p.point_pred = point_model.predict_point(s->features);
    point_rows.push_back(std::move(p));
    fu.neighbours.push_back(quantile_model.neighbour_labels(s->features));
    fu.universe.push_back(s->index);
  }
  std::sort(fu.universe.begin(), fu.universe.end());
  fu.point = SampleStore(std::move(point_rows));
  for (double a : cfg.alphas) fu.cqr.push_back(with_quantiles(fu.point, fu.neighbours, a / 2.0, 1.0 - a / 2.0));
  return fu;
}

struct Cell {
  bool ok = false;
  std::string error;
  double coverage = 0.0;
  double size = 0.0;  // NaN when no finite interval
  std::size_t n_inf = 0;
};

struct RepOutcome {
  std::vector<Cell> cells;  // methods x alphas, method-major
  std::vector<TargetRecord> records;
  std::optional<double> delta_avg;
  std::optional<double> delta_max;
  std::string fatal;
};

inline LabeledSample with_levels(const LabeledSample& base, const std::vector<double>& neighbours, double lo, double hi) {
  LabeledSample s = strip(base);
  s.quant_lo = quantile_of_sorted(neighbours, lo);
  s.quant_hi = quantile_of_sorted(neighbours, hi);
  return s;
}

// Evaluates every (method, alpha) cell of one repetition.
inline RepOutcome evaluate_rep(const FittedUniverse& fu, std::span<const IndexGroup> groups, std::size_t rep,
                               const ExperimentConfig& cfg) {
  RepOutcome out;
  out.cells.resize(cfg.methods.size() * cfg.alphas.size());

  const SplitAssignment split =
      symmetric_split(fu.universe, derive_seed(cfg.seed, {rep, tag(Stream::cal_test_split)}), cfg.split_mode);
  warn_if_cal_smaller(split);
  const auto views = split_groups(groups, split);
  std::vector<std::size_t> targets;
  for (std::size_t p = 0; p < views.size(); ++p)
    if (!views[p].test_members.empty()) targets.push_back(p);

  const std::vector<LabeledSample> cal_point = fu.point.gather(split.cal);
  std::vector<double> truth(views.size(), 0.0);
  for (auto t : targets) truth[t] = fu.point.sum(views[t].test_members, Field::label);

  const bool need_strata = std::any_of(cfg.methods.begin(), cfg.methods.end(), is_stratified);
  const std::optional<StrataSpec> strata =
      need_strata ? std::optional<StrataSpec>(default_strata(views, cfg.strata_min_count)) : std::nullopt;

  for (std::size_t ai = 0; ai < cfg.alphas.size(); ++ai) {
    const double alpha = cfg.alphas[ai];
    const SampleStore& cqr_store = fu.cqr[ai];
    std::optional<std::vector<LabeledSample>> cal_cqr;

    for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi) {
      const Method method = cfg.methods[mi];
      Cell& cell = out.cells[mi * cfg.alphas.size() + ai];
      try {
        const ScoreKind kind = uses_cqr(method) ? ScoreKind::cqr : ScoreKind::split;
        const SampleStore& store = kind == ScoreKind::cqr ? cqr_store : fu.point;
        std::optional<CiaCalibration> calib;
        if (method == Method::cia_split || method == Method::cia_cqr) calib.emplace(views, store, kind);
        if (is_stratified(method)) calib.emplace(views, store, kind, strata);
        if (method == Method::group_cqr && !cal_cqr) cal_cqr = cqr_store.gather(split.cal);
        std::map<std::size_t, std::vector<LabeledSample>> bonf_cal;  // by test size

        CoverageTally tally;
        for (auto t : targets) {
          const auto& view = views[t];
          const GroupId gid = view.group_id;
          const std::size_t m = view.test_members.size();
          IntervalPrediction iv;
          std::size_t stratum = 0;
          switch (method) {
            case Method::cia_split:
            case Method::cia_cqr: iv = calib->predict(gid, alpha); break;
            case Method::cia_split_strat:
            case Method::cia_cqr_strat: {
              const auto sp = calib->predict_stratified(gid, alpha);
              iv = sp.interval;
              stratum = sp.bucket;
              break;
            }
            case Method::group_split:
            case Method::group_cqr: {
              const auto test = store.gather(view.test_members);
              const auto& cal = method == Method::group_split ? cal_point : *cal_cqr;
              iv = group_sampling_predict(cal, test, alpha, kind, 0,
                                          derive_seed(cfg.seed, {rep, tag(Stream::group_sampling), ai,
                                                                 static_cast<std::uint64_t>(gid)}),
                                          gid);
              break;
            }
            case Method::normal_homo: iv = normal_homoscedastic_predict(cal_point, fu.point.gather(view.test_members), alpha, gid); break;
            case Method::normal_hetero: {
              const auto test = fu.point.gather(view.test_members);
              iv = normal_hetero_iqr_predict(
                  test, alpha,
                  [&](const LabeledSample& s) {
                    const auto& nb = fu.neighbours[fu.point.position(s.index)];
                    return std::pair{quantile_of_sorted(nb, 0.25), quantile_of_sorted(nb, 0.75)};
                  },
                  gid);
              break;
            }
            case Method::bonf_split: iv = bonferroni_predict(cal_point, fu.point.gather(view.test_members), alpha, kind, gid); break;
            case Method::bonf_cqr: {
              const double lo = alpha / (2.0 * static_cast<double>(m));
              const double hi = 1.0 - lo;
              auto it = bonf_cal.find(m);
              if (it == bonf_cal.end()) {
                std::vector<LabeledSample> cal;
                cal.reserve(split.cal.size());
                for (auto i : split.cal) {
                  const std::size_t p = fu.point.position(i);
                  cal.push_back(with_levels(fu.point.samples()[p], fu.neighbours[p], lo, hi));
                }
                it = bonf_cal.emplace(m, std::move(cal)).first;
              }
              std::vector<LabeledSample> test;
              for (auto i : view.test_members) {
                const std::size_t p = fu.point.position(i);
                test.push_back(with_levels(fu.point.samples()[p], fu.neighbours[p], lo, hi));
              }
              iv = bonferroni_predict(it->second, test, alpha, kind, gid);
              break;
            }
          }
          const bool hit = tally.add(iv, truth[t]);
          if (cfg.keep_target_records)
            out.records.push_back({rep, method, alpha, gid, m, stratum, hit, iv.width()});
        }
        if (targets.empty()) throw InputError("no group has a non-empty test side");
        cell.ok = true;
        cell.coverage = tally.coverage();
        cell.size = tally.mean_finite_width();
        cell.n_inf = tally.infinite();
      } catch (const std::exception& err) {
        cell = Cell{};
        cell.error = fmt::format("{}: {}", to_string(method), err.what());
      }
    }
  }
  return out;
}

template <class Work>
std::vector<RepOutcome> run_reps(std::size_t reps, std::size_t threads, Work&& work) {
  std::vector<RepOutcome> outcomes(reps);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t r = next++; r < reps; r = next++) {
      try {
        outcomes[r] = work(r);
      } catch (const std::exception& err) {
        outcomes[r] = RepOutcome{};
        outcomes[r].fatal = err.what();
      }
    }
  };
  threads = std::min(threads, reps);
  if (threads <= 1) {
    worker();
    return outcomes;
  }
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  return outcomes;
}

inline double sample_sd(std::span<const double> v, double mean) {
  if (v.size() < 2) return 0.0;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

inline ExperimentOutput aggregate(std::vector<RepOutcome>& outcomes, const ExperimentConfig& cfg) {
  ExperimentOutput out;
  const std::size_t n_alpha = cfg.alphas.size();
  for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi) {
    for (std::size_t ai = 0; ai < n_alpha; ++ai) {
      std::vector<double> cov;
      std::vector<double> size;
      MethodResult r;
      r.method = cfg.methods[mi];
      r.alpha = cfg.alphas[ai];
      for (auto& o : outcomes) {
        if (!o.fatal.empty()) continue;
        const Cell& c = o.cells[mi * n_alpha + ai];
        if (!c.ok) {
          ++out.failures[c.error];
          continue;
        }
        cov.push_back(c.coverage);
        if (!std::isnan(c.size)) size.push_back(c.size);
        r.infinite_interval_count += c.n_inf;
      }
      r.reps = cov.size();
      if (!cov.empty()) {
        r.mean_coverage = std::accumulate(cov.begin(), cov.end(), 0.0) / static_cast<double>(cov.size());
        r.coverage_std = sample_sd(cov, r.mean_coverage);
      }
      if (!size.empty()) {
        r.mean_size = std::accumulate(size.begin(), size.end(), 0.0) / static_cast<double>(size.size());
        r.size_std = sample_sd(size, r.mean_size);
      } else {
        r.mean_size = kInf;
      }
      if (r.reps > 0) out.results.push_back(r);
    }
  }
  for (auto& o : outcomes) {
    if (!o.fatal.empty()) ++out.failures[fmt::format("repetition failed: {}", o.fatal)];
    if (o.delta_avg) out.delta_avg.push_back(*o.delta_avg);
    if (o.delta_max) out.delta_max.push_back(*o.delta_max);
    out.records.insert(out.records.end(), o.records.begin(), o.records.end());
  }
  std::stable_sort(out.results.begin(), out.results.end(), [](const MethodResult& a, const MethodResult& b) {
    return std::pair{static_cast<int>(a.method), a.alpha} < std::pair{static_cast<int>(b.method), b.alpha};
  });
  return out;
}

inline std::vector<bool> draw_train_mask(std::size_t n, double train_frac, std::uint64_t seed) {
  if (n < 3) throw InputError("need at least 3 rows to form train, calibration and test sets");
  const auto n_train = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(train_frac * static_cast<double>(n))),
                                               1, n - 2);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<bool> mask(n, false);
  for (std::size_t p = 0; p < n_train; ++p) mask[order[p]] = true;
  return mask;
}

}  // namespace detail

/// Group-sum experiment on a tabular data set with fixed groups.
inline ExperimentOutput run_experiment(const Dataset& ds, std::span<const IndexGroup> groups, const ExperimentConfig& cfg) {
  cfg.validate();
  for (std::size_t r = 0; r < ds.samples.size(); ++r) {
    if (ds.samples[r].index != static_cast<SampleIndex>(r)) throw InputError("dataset rows must be indexed by position");
    if (!ds.samples[r].label) throw InputError(fmt::format("row {} has no label", r));
  }
  if (!ds.fixed_train.empty() && ds.fixed_train.size() != ds.samples.size())
    throw InputError("fixed training mask does not match the number of rows");

  auto mask_for = [&](std::size_t rep) {
    if (!ds.fixed_train.empty()) return ds.fixed_train;
    const std::uint64_t s = cfg.resample_train ? derive_seed(cfg.seed, {rep, tag(Stream::train_split)})
                                               : derive_seed(cfg.seed, {tag(Stream::train_split)});
    return detail::draw_train_mask(ds.samples.size(), cfg.train_frac, s);
  };
  auto restricted_for = [&](const detail::FittedUniverse& fu) { return restrict_groups(groups, fu.universe); };

  std::optional<detail::FittedUniverse> shared;
  std::vector<IndexGroup> shared_groups;
  if (!cfg.resample_train || !ds.fixed_train.empty()) {
    shared = detail::fit_universe(ds.samples, mask_for(0), cfg);
    shared_groups = restricted_for(*shared);
  }
  auto outcomes = detail::run_reps(cfg.reps, resolve_threads(cfg.threads), [&](std::size_t rep) {
    if (shared) return detail::evaluate_rep(*shared, shared_groups, rep, cfg);
    const auto fu = detail::fit_universe(ds.samples, mask_for(rep), cfg);
    const auto g = restricted_for(fu);
    return detail::evaluate_rep(fu, g, rep, cfg);
  });
  return detail::aggregate(outcomes, cfg);
}

struct PathExperimentConfig {
  ExperimentConfig base;
  std::size_t n_paths = 2000;
  std::size_t min_path_len = 1;
};

/// Edges as samples: the stored cost and edge features are the model inputs.
inline std::vector<LabeledSample> edge_samples(const WeightedGraph& g) {
  std::vector<LabeledSample> rows;
  rows.reserve(g.edges().size());
  std::size_t unlabeled = 0;
  for (const auto& e : g.edges()) {
    LabeledSample s;
    s.index = e.id;
    s.features.push_back(e.cost);
    s.features.insert(s.features.end(), e.features.begin(), e.features.end());
    s.label = e.label;
    if (!e.label) ++unlabeled;
    rows.push_back(std::move(s));
  }
  if (unlabeled > 0)
    throw InputError(fmt::format("path-cost experiments need a label on every edge ({} unlabeled)", unlabeled));
  return rows;
}

/// Path-cost experiment. Training edges cost their true label, held-out
/// edges their (non-negative clamped) prediction; each repetition samples
/// shortest paths under those costs, restricts them to held-out edges and
/// evaluates the test-side path sums.
inline ExperimentOutput run_path_experiment(const WeightedGraph& g, const PathExperimentConfig& pcfg) {
  const ExperimentConfig& cfg = pcfg.base;
  cfg.validate();
  if (pcfg.n_paths < 2) throw InputError("need at least two paths");
  const auto rows = edge_samples(g);
  const auto mask = detail::draw_train_mask(rows.size(), cfg.train_frac, derive_seed(cfg.seed, {tag(Stream::train_split)}));
  const auto fu = detail::fit_universe(rows, mask, cfg);

  std::vector<double> cost(rows.size());
  std::size_t clamped = 0;
  for (std::size_t p = 0; p < rows.size(); ++p) {
    const double c = mask[p] ? *rows[p].label : *fu.point.at(rows[p].index).point_pred;
    if (c < 0.0) ++clamped;
    cost[p] = std::max(c, 0.0);
  }
  if (clamped > 0) Diagnostics::report(fmt::format("{} negative edge cost(s) clamped to 0 for routing", clamped));
  const CostFn cost_fn = [&](const Edge& e) { return cost[g.edge_position(e.id)]; };

  auto outcomes = detail::run_reps(cfg.reps, resolve_threads(cfg.threads), [&](std::size_t rep) {
    const auto paths = sample_path_groups(g, pcfg.n_paths, derive_seed(cfg.seed, {rep, tag(Stream::path_sampling)}),
                                          pcfg.min_path_len, cost_fn);
    std::vector<IndexGroup> groups;
    groups.reserve(paths.size());
    for (std::size_t k = 0; k < paths.size(); ++k) groups.push_back(paths[k].as_group(static_cast<GroupId>(k)));
    const auto restricted = restrict_groups(groups, fu.universe);
    auto outcome = detail::evaluate_rep(fu, restricted, rep, cfg);
    if (restricted.size() >= 2) {
      outcome.delta_avg = overlap_delta_avg(restricted);
      outcome.delta_max = overlap_delta_max(restricted);
    }
    return outcome;
  });
  return detail::aggregate(outcomes, cfg);
}

struct OverlapRow {
  std::size_t min_path_len = 1;
  Method method = Method::cia_split;
  double alpha = 0.1;
  double delta_avg = 0.0;
  double delta_max = 0.0;
  double coverage = 0.0;
  double coverage_gap = 0.0;  // coverage - (1 - alpha)
  double size = 0.0;
  std::size_t reps = 0;
};

struct OverlapStudy {
  std::vector<OverlapRow> rows;
  std::vector<std::pair<std::size_t, ExperimentOutput>> runs;  // per min_path_len
  std::map<std::string, std::size_t> failures;
};

/// Runs the path experiment once per minimum path length and pairs the
/// average overlap measures with each method's coverage gap.
inline OverlapStudy overlap_gap_study(const WeightedGraph& g, const PathExperimentConfig& pcfg,
                                      std::span<const std::size_t> min_len_grid) {
  if (min_len_grid.empty()) throw InputError("min_len grid is empty");
  OverlapStudy study;
  for (auto len : min_len_grid) {
    PathExperimentConfig cfg = pcfg;
    cfg.min_path_len = len;
    ExperimentOutput run;
    try {
      run = run_path_experiment(g, cfg);
    } catch (const InputError& err) {
      ++study.failures[fmt::format("min_len {}: {}", len, err.what())];
      continue;
    }
    for (const auto& [msg, count] : run.failures) study.failures[fmt::format("min_len {}: {}", len, msg)] += count;
    if (run.delta_avg.empty()) {
      ++study.failures[fmt::format("min_len {}: no repetition produced paths", len)];
      continue;
    }
    const auto mean = [](const std::vector<double>& v) {
      return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    };
    const double d_avg = mean(run.delta_avg);
    const double d_max = mean(run.delta_max);
    for (const auto& r : run.results)
      study.rows.push_back({len, r.method, r.alpha, d_avg, d_max, r.mean_coverage, r.mean_coverage - (1.0 - r.alpha), r.mean_size,
                            r.reps});
    study.runs.emplace_back(len, std::move(run));
  }
  return study;
}

/// Spearman rank correlation (average ranks for ties); 0 when either side is constant.
inline double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw InputError("spearman needs two equal-length samples of size >= 2");
  auto ranks = [](std::span<const double> v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < order.size();) {
      std::size_t j = i;
      while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
      const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto rx = ranks(x);
  const auto ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace cia
