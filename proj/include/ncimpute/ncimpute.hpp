#pragma once

#include "ncimpute/error.hpp"
#include "ncimpute/penalty.hpp"
#include "ncimpute/rng.hpp"
#include "ncimpute/spectral.hpp"
#include "ncimpute/lowrank.hpp"
#include "ncimpute/impute.hpp"
#include "ncimpute/dof.hpp"
#include "ncimpute/data.hpp"
#include "ncimpute/io.hpp"
