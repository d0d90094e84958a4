#pragma once

#include "skt/config.hpp"
#include "skt/core_model.hpp"
#include "skt/grid.hpp"
#include "skt/noise.hpp"
#include "skt/parallel.hpp"
#include "skt/particle_system.hpp"
#include "skt/regularization.hpp"
#include "skt/spde_solver.hpp"
