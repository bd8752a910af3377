#pragma once

#include "flmm/basis.hpp"
#include "flmm/covfit.hpp"
#include "flmm/famm.hpp"
#include "flmm/fdata.hpp"
#include "flmm/fpca.hpp"
#include "flmm/meanfit.hpp"
#include "flmm/numerics.hpp"
#include "flmm/pipeline.hpp"
#include "flmm/predict.hpp"
#include "flmm/sim.hpp"
