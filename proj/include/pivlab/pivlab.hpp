#pragma once

#include "pivlab/admissibility.hpp"
#include "pivlab/audit.hpp"
#include "pivlab/bsde.hpp"
#include "pivlab/cli.hpp"
#include "pivlab/condexp.hpp"
#include "pivlab/deflator.hpp"
#include "pivlab/ensemble_io.hpp"
#include "pivlab/error.hpp"
#include "pivlab/expr.hpp"
#include "pivlab/format.hpp"
#include "pivlab/grid.hpp"
#include "pivlab/measure.hpp"
#include "pivlab/model.hpp"
#include "pivlab/quadrature.hpp"
#include "pivlab/report.hpp"
#include "pivlab/rng.hpp"
#include "pivlab/scenarios.hpp"
#include "pivlab/sim.hpp"
#include "pivlab/stats.hpp"
