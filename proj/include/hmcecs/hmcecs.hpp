#ifndef HMCECS_HMCECS_HPP
#define HMCECS_HMCECS_HPP

#include <hmcecs/types.hpp>
#include <hmcecs/model.hpp>
#include <hmcecs/splines.hpp>
#include <hmcecs/data_io.hpp>
#include <hmcecs/control_variates.hpp>
#include <hmcecs/estimators.hpp>
#include <hmcecs/poisson.hpp>
#include <hmcecs/subsample.hpp>
#include <hmcecs/hamiltonian.hpp>
#include <hmcecs/tuning.hpp>
#include <hmcecs/trace.hpp>
#include <hmcecs/sampler.hpp>
#include <hmcecs/pilot.hpp>
#include <hmcecs/diagnostics.hpp>

#endif  // HMCECS_HMCECS_HPP
