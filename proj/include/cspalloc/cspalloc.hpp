// Umbrella header: pulls in the whole library.
#pragma once

#include <cspalloc/common.hpp>
#include <cspalloc/core.hpp>
#include <cspalloc/energy.hpp>
#include <cspalloc/energy_io.hpp>
#include <cspalloc/experiment.hpp>
#include <cspalloc/gnt.hpp>
#include <cspalloc/graphs.hpp>
#include <cspalloc/io.hpp>
#include <cspalloc/oracle.hpp>
#include <cspalloc/rng.hpp>
#include <cspalloc/solvers.hpp>
