#pragma once

#include "bymcmc/band_linalg.hpp"
#include "bymcmc/error.hpp"
#include "bymcmc/gaussian_approx.hpp"
#include "bymcmc/heavy_tail_proposal.hpp"
#include "bymcmc/io.hpp"
#include "bymcmc/mc_output.hpp"
#include "bymcmc/model.hpp"
#include "bymcmc/optimize.hpp"
#include "bymcmc/random.hpp"
#include "bymcmc/run.hpp"
#include "bymcmc/samplers.hpp"
#include "bymcmc/spatial_model.hpp"
