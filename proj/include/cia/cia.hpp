#pragma once

#include "cia/baselines.hpp"
#include "cia/core.hpp"
#include "cia/csv.hpp"
#include "cia/diagnostics.hpp"
#include "cia/engine.hpp"
#include "cia/experiments.hpp"
#include "cia/graph.hpp"
#include "cia/models.hpp"
#include "cia/random.hpp"
#include "cia/report.hpp"
#include "cia/scoring.hpp"
