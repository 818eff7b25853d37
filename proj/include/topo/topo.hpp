#pragma once

#include "error.hpp"
#include "format.hpp"
#include "matrix.hpp"
#include "rng.hpp"
#include "trajectory_store.hpp"
#include "metrics.hpp"
#include "ph0_mst.hpp"
#include "magnitude.hpp"
#include "analysis.hpp"
#include "synthgen.hpp"
