#pragma once

#include "epical/autodiff.hpp"
#include "epical/calibrate.hpp"
#include "epical/errors.hpp"
#include "epical/integrate.hpp"
#include "epical/io.hpp"
#include "epical/loss.hpp"
#include "epical/mcmc.hpp"
#include "epical/models.hpp"
#include "epical/neural.hpp"
#include "epical/parameters.hpp"
#include "epical/posterior.hpp"
#include "epical/presets.hpp"
#include "epical/problem.hpp"
#include "epical/random.hpp"
#include "epical/run.hpp"
#include "epical/timeseries.hpp"
