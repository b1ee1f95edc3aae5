#pragma once

#include "degen/chart.hpp"
#include "degen/errors.hpp"
#include "degen/expr.hpp"
#include "degen/problem.hpp"
#include "degen/report.hpp"
#include "degen/rng.hpp"
#include "degen/sampling.hpp"
#include "degen/sde.hpp"
#include "degen/tape.hpp"
#include "degen/vector_field.hpp"
#include "degen/vf_algebra.hpp"
