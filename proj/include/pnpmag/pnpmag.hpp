#pragma once

#include "core.hpp"
#include "digest.hpp"
#include "parallel.hpp"
#include "io.hpp"
#include "forward_model.hpp"
#include "scene_gen.hpp"
#include "denoise.hpp"
#include "plugin.hpp"
#include "solver.hpp"
#include "baselines.hpp"
#include "metrics.hpp"
#include "bench.hpp"
