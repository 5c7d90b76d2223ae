// Command-line front end: group-avg, path-cost, simulate, overlap-study,
// make-grid. Results go to <out>/results.csv plus two SVG charts. Failures
// print one JSON object on stderr and exit nonzero.

#include <cctype>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cia/cia.hpp"

namespace {

using namespace cia;

struct CommonOptions {
  std::string alphas = "0.1";
  std::size_t reps = 100;
  std::uint64_t seed = 7;
  std::string methods = "all";
  double train_frac = 0.7;
  std::string split = "balanced";
  std::string model = "linear_ls";
  std::size_t k_neighbors = 30;
  std::size_t quantile_k = 50;
  std::size_t strata_min = 20;
  bool resample_train = false;
  std::size_t threads = 0;
  std::string out;
};

void add_common(CLI::App& app, CommonOptions& o, bool need_methods = true) {
  app.add_option("--alpha", o.alphas, "Comma separated miscoverage levels")->capture_default_str();
  app.add_option("--reps", o.reps, "Repetitions")->capture_default_str();
  app.add_option("--seed", o.seed, "Base seed")->capture_default_str();
  if (need_methods) app.add_option("--methods", o.methods, "'all', 'cia' or a comma separated list")->capture_default_str();
  app.add_option("--train-frac", o.train_frac, "Fraction of rows used for training")->capture_default_str();
  app.add_option("--split", o.split, "bernoulli or balanced")->capture_default_str();
  app.add_option("--model", o.model, "mean, linear_ls or knn")->capture_default_str();
  app.add_option("--k", o.k_neighbors, "Neighbours of the knn point model")->capture_default_str();
  app.add_option("--quantile-k", o.quantile_k, "Neighbours of the knn quantile model")->capture_default_str();
  app.add_option("--strata-min", o.strata_min, "Minimum pool size per stratum")->capture_default_str();
  app.add_flag("--resample-train", o.resample_train, "Draw a new training set every repetition");
  app.add_option("--threads", o.threads, "Parallel repetitions (default: CIA_THREADS or all cores)");
  app.add_option("--out", o.out, "Output directory")->required();
}

std::vector<double> parse_list(const std::string& text, const char* what) {
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t end = std::min(text.find(',', start), text.size());
    const auto item = std::string_view(text).substr(start, end - start);
    if (!detail::trim(item).empty()) {
      const auto v = parse_double(item);
      if (!v) throw InputError(fmt::format("invalid {} '{}'", what, item));
      out.push_back(*v);
    }
    start = end + 1;
  }
  if (out.empty()) throw InputError(fmt::format("no {} given", what));
  return out;
}

std::vector<std::size_t> parse_size_list(const std::string& text, const char* what) {
  std::vector<std::size_t> out;
  for (double v : parse_list(text, what)) {
    if (v < 0 || v != std::floor(v)) throw InputError(fmt::format("{} must be non-negative integers", what));
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

std::vector<std::string> parse_names(const std::string& text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t end = std::min(text.find(',', start), text.size());
    const auto item = detail::trim(std::string_view(text).substr(start, end - start));
    if (!item.empty()) out.emplace_back(item);
    start = end + 1;
  }
  return out;
}

ExperimentConfig make_config(const CommonOptions& o) {
  ExperimentConfig cfg;
  cfg.alphas = parse_list(o.alphas, "alpha");
  cfg.reps = o.reps;
  cfg.seed = o.seed;
  cfg.methods = parse_methods(o.methods);
  cfg.train_frac = o.train_frac;
  if (o.split == "balanced")
    cfg.split_mode = SplitMode::balanced;
  else if (o.split == "bernoulli")
    cfg.split_mode = SplitMode::bernoulli;
  else
    throw InputError(fmt::format("unknown split mode '{}'", o.split));
  cfg.model = parse_model_kind(o.model);
  cfg.model_options.k_neighbors = o.k_neighbors;
  cfg.quantile_neighbors = o.quantile_k;
  cfg.strata_min_count = o.strata_min;
  cfg.resample_train = o.resample_train;
  cfg.threads = o.threads;
  cfg.validate();
  return cfg;
}

// Collects diagnostics and failures and prints a bounded summary on stderr.
class Notes {
 public:
  // Messages differing only in their numbers share one line.
  void add(std::string_view msg, std::size_t count = 1) {
    std::string key;
    for (std::size_t i = 0; i < msg.size(); ++i) {
      const bool digit = std::isdigit(static_cast<unsigned char>(msg[i])) != 0;
      if (!digit) {
        key.push_back(msg[i]);
      } else if (i == 0 || !std::isdigit(static_cast<unsigned char>(msg[i - 1]))) {
        key.push_back('N');
      }
    }
    std::lock_guard lock(mutex_);
    counts_[key] += count;
  }
  void print() const {
    std::size_t shown = 0;
    for (const auto& [msg, count] : counts_) {
      if (shown++ == 20) {
        std::cerr << fmt::format("note: ... {} more distinct messages\n", counts_.size() - 20);
        break;
      }
      std::cerr << fmt::format("note: {} (x{})\n", msg, count);
    }
  }

 private:
  mutable std::mutex mutex_;
  std::map<std::string, std::size_t> counts_;
};

void finish(const ExperimentOutput& out, const std::string& dir, Notes& notes) {
  for (const auto& [msg, count] : out.failures) notes.add(msg, count);
  if (out.results.empty()) throw InputError("every repetition failed for every method");
  emit_report(out.results, dir);
  std::cout << fmt::format("{:<16} {:>6} {:>10} {:>10} {:>6}\n", "method", "alpha", "coverage", "size", "reps");
  for (const auto& r : sorted_results(out.results))
    std::cout << fmt::format("{:<16} {:>6} {:>10.4f} {:>10.4g} {:>6}\n", to_string(r.method), r.alpha, r.mean_coverage,
                             r.mean_size, r.reps);
  std::cout << "wrote " << (std::filesystem::path(dir) / "results.csv").string() << '\n';
}

int fail(const std::string& kind, const std::string& message, std::optional<std::size_t> line = std::nullopt) {
  nlohmann::json j{{"error", kind}, {"message", message}};
  if (line) j["line"] = *line;
  std::cerr << j.dump() << std::endl;
  return kind == "io" ? 3 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prediction intervals for sums of unknown labels over index groups"};
  app.require_subcommand(1);

  CommonOptions group_opts, path_opts, sim_opts, overlap_opts;
  std::string data, label, group_by, graph_path, min_len_grid = "1,3,5,8", noise = "gaussian", size_range;
  std::size_t bins = 0, n_paths = 2000, min_len = 1, sim_n = 5000, sim_groups = 300;
  double group_effect = 0.0, noise_scale = 1.0;

  auto* group_avg = app.add_subcommand("group-avg", "Sums over categorical groups of a tabular data set");
  group_avg->add_option("--data", data, "CSV file with a header")->required();
  group_avg->add_option("--label", label, "Response column")->required();
  group_avg->add_option("--group-by", group_by, "Comma separated grouping columns")->required();
  group_avg->add_option("--bins", bins, "Equal-frequency bins for non-categorical grouping columns");
  add_common(*group_avg, group_opts);

  auto* path_cost = app.add_subcommand("path-cost", "Costs of sampled shortest paths on an edge-list graph");
  path_cost->add_option("--graph", graph_path, "Edge-list CSV")->required();
  path_cost->add_option("--paths", n_paths, "Paths per repetition")->capture_default_str();
  path_cost->add_option("--min-len", min_len, "Minimum path length in edges")->capture_default_str();
  add_common(*path_cost, path_opts);

  auto* simulate = app.add_subcommand("simulate", "Synthetic linear data with random disjoint groups");
  simulate->add_option("--n", sim_n, "Samples")->capture_default_str();
  simulate->add_option("--groups", sim_groups, "Groups")->capture_default_str();
  simulate->add_option("--noise", noise, "gaussian or student_t")->capture_default_str();
  simulate->add_option("--noise-scale", noise_scale, "Noise multiplier")->capture_default_str();
  simulate->add_option("--group-effect", group_effect, "Sd of a shared per-group shift")->capture_default_str();
  simulate->add_option("--group-sizes", size_range, "lo,hi: draw group sizes uniformly; --n rows then form a fixed training set");
  add_common(*simulate, sim_opts);

  auto* overlap = app.add_subcommand("overlap-study", "Overlap measures against coverage gap over minimum path lengths");
  overlap->add_option("--graph", graph_path, "Edge-list CSV")->required();
  overlap->add_option("--min-len-grid", min_len_grid, "Comma separated minimum path lengths")->capture_default_str();
  overlap->add_option("--paths", n_paths, "Paths per repetition")->capture_default_str();
  overlap_opts.methods = "cia";
  overlap_opts.reps = 50;
  add_common(*overlap, overlap_opts);

  GridOptions grid;
  std::uint64_t grid_seed = 7;
  std::string grid_out;
  auto* make_grid = app.add_subcommand("make-grid", "Write a synthetic labelled grid road network");
  make_grid->add_option("--rows", grid.rows)->capture_default_str();
  make_grid->add_option("--cols", grid.cols)->capture_default_str();
  make_grid->add_option("--noise", grid.noise_sd, "Label noise sd")->capture_default_str();
  make_grid->add_option("--seed", grid_seed)->capture_default_str();
  make_grid->add_option("--out", grid_out, "Edge-list CSV to write")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what());
  }

  Notes notes;
  Diagnostics::set_sink([&](std::string_view msg) { notes.add(msg); });
  int code = 0;
  try {
    if (*group_avg) {
      const auto cfg = make_config(group_opts);
      const auto columns = parse_names(group_by);
      const Dataset ds = load_tabular_csv(data, label, columns);
      const auto groups = build_groups_by_category(ds, columns, {}, GroupingOptions{bins});
      finish(run_experiment(ds, groups, cfg), group_opts.out, notes);
    } else if (*path_cost) {
      PathExperimentConfig pc{make_config(path_opts), n_paths, min_len};
      finish(run_path_experiment(load_edge_list(graph_path), pc), path_opts.out, notes);
    } else if (*simulate) {
      SyntheticConfig sc;
      sc.n_samples = sim_n;
      sc.n_groups = sim_groups;
      sc.noise = parse_noise_kind(noise);
      sc.noise_scale = noise_scale;
      sc.group_effect_sd = group_effect;
      sc.seed = sim_opts.seed;
      if (!size_range.empty()) {
        const auto r = parse_size_list(size_range, "group size range");
        if (r.size() != 2) throw InputError("--group-sizes expects lo,hi");
        sc.group_size_range = std::pair{r[0], r[1]};
      }
      const auto cfg = make_config(sim_opts);
      const auto synth = generate_synthetic(sc);
      finish(run_experiment(synth.dataset, synth.groups, cfg), sim_opts.out, notes);
    } else if (*overlap) {
      PathExperimentConfig pc{make_config(overlap_opts), n_paths, 1};
      const auto lens = parse_size_list(min_len_grid, "min-len grid");
      const auto study = overlap_gap_study(load_edge_list(graph_path), pc, lens);
      for (const auto& [msg, count] : study.failures) notes.add(msg, count);
      if (study.rows.empty()) throw InputError("no min-len row produced results");
      for (const auto& [len, run] : study.runs) emit_report(run.results, std::filesystem::path(overlap_opts.out) / fmt::format("min_len_{}", len));
      emit_overlap_csv(study.rows, overlap_opts.out);
      std::cout << fmt::format("{:>7} {:<16} {:>9} {:>9} {:>9} {:>9}\n", "min_len", "method", "delta_avg", "delta_max", "coverage",
                               "gap");
      for (const auto& r : study.rows)
        std::cout << fmt::format("{:>7} {:<16} {:>9.4f} {:>9.4f} {:>9.4f} {:>9.4f}\n", r.min_path_len, to_string(r.method),
                                 r.delta_avg, r.delta_max, r.coverage, r.coverage_gap);
      std::cout << "wrote " << (std::filesystem::path(overlap_opts.out) / "overlap.csv").string() << '\n';
    } else if (*make_grid) {
      write_edge_list(make_grid_graph(grid, grid_seed), grid_out);
      std::cout << "wrote " << grid_out << '\n';
    }
  } catch (const ParseError& e) {
    code = fail("parse", e.what(), e.line());
  } catch (const InputError& e) {
    code = fail("input", e.what());
  } catch (const std::exception& e) {
    code = fail("io", e.what());
  }
  Diagnostics::set_sink(nullptr);
  notes.print();
  return code;
}
