#pragma once

// Umbrella header.

#include "rsr/error.hpp"
#include "rsr/rng.hpp"
#include "rsr/parallel.hpp"
#include "rsr/linalg.hpp"
#include "rsr/family.hpp"
#include "rsr/scaled_product.hpp"
#include "rsr/exactspec.hpp"
#include "rsr/sampler.hpp"
#include "rsr/gaussmax.hpp"
#include "rsr/edgeworth.hpp"
#include "rsr/fit.hpp"
#include "rsr/perturb.hpp"
#include "rsr/mc.hpp"
#include "rsr/version.hpp"
