#pragma once

#include "ndde/adjoint.hpp"
#include "ndde/config.hpp"
#include "ndde/datasets.hpp"
#include "ndde/errors.hpp"
#include "ndde/field.hpp"
#include "ndde/io.hpp"
#include "ndde/mlp.hpp"
#include "ndde/models.hpp"
#include "ndde/rng.hpp"
#include "ndde/solver.hpp"
#include "ndde/train.hpp"
#include "ndde/version.hpp"
