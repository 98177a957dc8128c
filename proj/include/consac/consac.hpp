#pragma once

// Umbrella header.

#include "consac/types.hpp"
#include "consac/geometry.hpp"
#include "consac/scoring.hpp"
#include "consac/sampler.hpp"
#include "consac/network.hpp"
#include "consac/training.hpp"
#include "consac/refine.hpp"
#include "consac/eval.hpp"
#include "consac/data.hpp"
#include "consac/pipeline.hpp"
#include "consac/svg.hpp"
