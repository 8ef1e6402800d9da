#pragma once

#include "eventpde/comm.hpp"
#include "eventpde/convergence.hpp"
#include "eventpde/direct_solve.hpp"
#include "eventpde/event_policy.hpp"
#include "eventpde/grid.hpp"
#include "eventpde/problems.hpp"
#include "eventpde/report.hpp"
#include "eventpde/runner.hpp"
#include "eventpde/sweep.hpp"
