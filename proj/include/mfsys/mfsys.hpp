#pragma once

#include "mfsys/config_json.hpp"
#include "mfsys/core.hpp"
#include "mfsys/finite_sim.hpp"
#include "mfsys/meanfield.hpp"
#include "mfsys/parallel.hpp"
#include "mfsys/placement.hpp"
#include "mfsys/redundancy.hpp"
#include "mfsys/report.hpp"
#include "mfsys/rng.hpp"
#include "mfsys/stats.hpp"
#include "mfsys/tail.hpp"
