#pragma once

// Umbrella header for the whole library.

#include "spf/core.hpp"
#include "spf/rng.hpp"
#include "spf/models.hpp"
#include "spf/grid_map.hpp"
#include "spf/kernels.hpp"
#include "spf/stein.hpp"
#include "spf/optimizers.hpp"
#include "spf/filters.hpp"
#include "spf/kalman.hpp"
#include "spf/metrics.hpp"
#include "spf/scenarios.hpp"
#include "spf/io.hpp"
#include "spf/runner.hpp"
#include "spf/checks.hpp"
