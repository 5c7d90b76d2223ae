#pragma once

#include <optional>
#include <vector>

#include "cia/core.hpp"

namespace cia::test {

inline LabeledSample point(SampleIndex i, double y, double yhat) {
  LabeledSample s;
  s.index = i;
  s.label = y;
  s.point_pred = yhat;
  return s;
}

inline LabeledSample band(SampleIndex i, double y, double lo, double hi, std::optional<double> yhat = std::nullopt) {
  LabeledSample s;
  s.index = i;
  s.label = y;
  s.quant_lo = lo;
  s.quant_hi = hi;
  s.point_pred = yhat;
  return s;
}

}  // namespace cia::test
