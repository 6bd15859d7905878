#pragma once

#include "ddr/bound.hpp"
#include "ddr/cost.hpp"
#include "ddr/driver.hpp"
#include "ddr/error.hpp"
#include "ddr/fcnn.hpp"
#include "ddr/grid.hpp"
#include "ddr/lbfgs.hpp"
#include "ddr/metrics.hpp"
#include "ddr/registration.hpp"
#include "ddr/synth.hpp"
