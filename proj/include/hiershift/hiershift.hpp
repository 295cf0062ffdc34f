#pragma once

#include "hiershift/error.hpp"
#include "hiershift/hierarchy.hpp"
#include "hiershift/rng.hpp"
#include "hiershift/datagen.hpp"
#include "hiershift/tensor.hpp"
#include "hiershift/tape.hpp"
#include "hiershift/network.hpp"
#include "hiershift/optim.hpp"
#include "hiershift/conditional.hpp"
#include "hiershift/eval.hpp"
#include "hiershift/experiment.hpp"
