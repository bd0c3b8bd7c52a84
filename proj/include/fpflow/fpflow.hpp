#pragma once

#include "fpflow/core.hpp"
#include "fpflow/params.hpp"
#include "fpflow/tape.hpp"
#include "fpflow/mlp.hpp"
#include "fpflow/map_jet.hpp"
#include "fpflow/transport_map.hpp"
#include "fpflow/dynamics.hpp"
#include "fpflow/sde.hpp"
#include "fpflow/dataset_io.hpp"
#include "fpflow/training.hpp"
#include "fpflow/bayes.hpp"
#include "fpflow/experiment.hpp"
