#pragma once

#include "latentcast/errors.hpp"
#include "latentcast/likelihood.hpp"
#include "latentcast/issm.hpp"
#include "latentcast/srif.hpp"
#include "latentcast/gaussian_inference.hpp"
#include "latentcast/mode_finding.hpp"
#include "latentcast/parameters.hpp"
#include "latentcast/lbfgs.hpp"
#include "latentcast/training.hpp"
#include "latentcast/forecast.hpp"
#include "latentcast/evaluation.hpp"
