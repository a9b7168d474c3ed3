#pragma once

#include "aerloc/counter_rng.hpp"
#include "aerloc/ekf.hpp"
#include "aerloc/grid_map.hpp"
#include "aerloc/local_map.hpp"
#include "aerloc/nmi.hpp"
#include "aerloc/patch.hpp"
#include "aerloc/pipeline.hpp"
#include "aerloc/pose.hpp"
#include "aerloc/registration.hpp"
#include "aerloc/sim_world.hpp"
#include "aerloc/simulator.hpp"
