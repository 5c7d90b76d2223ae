// Minimal library walk-through: fit a model, split the held-out rows,
// and predict intervals for the test-side sums of a few groups.

#include <iostream>

#include "cia/cia.hpp"

int main() {
  using namespace cia;

  SyntheticConfig sc;
  sc.n_samples = 2000;
  sc.n_groups = 100;
  const auto data = generate_synthetic(sc);
  const auto& rows = data.dataset.samples;

  std::vector<LabeledSample> train;
  std::vector<LabeledSample> held;
  for (const auto& s : rows) (s.index % 10 < 7 ? train : held).push_back(s);
  const FittedModel model = fit(train, ModelKind::linear_ls);
  std::vector<SampleIndex> universe;
  for (auto& s : held) {
    s.point_pred = model.predict_point(s.features);
    universe.push_back(s.index);
  }
  const SampleStore store(held);

  const auto groups = restrict_groups(data.groups, universe);
  const auto split = symmetric_split(universe, 42, SplitMode::balanced);
  const auto views = split_groups(groups, split);
  const CiaCalibration calib(views, store, ScoreKind::split);

  const double alpha = 0.1;
  for (std::size_t k = 0; k < 5; ++k) {
    const auto& v = views[k];
    if (v.test_members.empty()) continue;
    const auto iv = calib.predict(v.group_id, alpha);
    const double truth = store.sum(v.test_members, Field::label);
    std::cout << fmt::format("group {:>3}  m={:>2}  [{:8.3f}, {:8.3f}]  truth {:8.3f}  {}\n", v.group_id, v.test_members.size(),
                             iv.lower, iv.upper, truth, iv.contains(truth) ? "covered" : "missed");
  }
}
