// SPDX-License-Identifier: Apache-2.0
#pragma once

// Umbrella header.

#include "lemb/artifacts.hpp"
#include "lemb/autodiff.hpp"
#include "lemb/config.hpp"
#include "lemb/corpus.hpp"
#include "lemb/embedding_types.hpp"
#include "lemb/error.hpp"
#include "lemb/experiment.hpp"
#include "lemb/langembed.hpp"
#include "lemb/lbt.hpp"
#include "lemb/math.hpp"
#include "lemb/metrics.hpp"
#include "lemb/model.hpp"
#include "lemb/optim.hpp"
#include "lemb/pipeline.hpp"
#include "lemb/random.hpp"
#include "lemb/tensor.hpp"
#include "lemb/trainer.hpp"
