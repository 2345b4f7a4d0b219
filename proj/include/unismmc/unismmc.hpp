// Umbrella header.
#pragma once

#include "unismmc/autodiff.hpp"
#include "unismmc/batch.hpp"
#include "unismmc/errors.hpp"
#include "unismmc/experiment.hpp"
#include "unismmc/io.hpp"
#include "unismmc/losses.hpp"
#include "unismmc/model.hpp"
#include "unismmc/optim.hpp"
#include "unismmc/synthgen.hpp"
#include "unismmc/tensor.hpp"
#include "unismmc/trainer.hpp"
