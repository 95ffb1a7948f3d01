#pragma once

#include "trelab/config.hpp"
#include "trelab/dist.hpp"
#include "trelab/envs.hpp"
#include "trelab/experiment.hpp"
#include "trelab/metrics.hpp"
#include "trelab/policy.hpp"
#include "trelab/ppo.hpp"
#include "trelab/random.hpp"
#include "trelab/regularizers.hpp"
#include "trelab/selectors.hpp"
#include "trelab/trust_region.hpp"
