#pragma once

#include "mesr/error.hpp"
#include "mesr/image.hpp"
#include "mesr/rng.hpp"
#include "mesr/sequence.hpp"
#include "mesr/noise_sim.hpp"
#include "mesr/scenes.hpp"
#include "mesr/flow.hpp"
#include "mesr/base_detail.hpp"
#include "mesr/register.hpp"
#include "mesr/tensor.hpp"
#include "mesr/splat_pool.hpp"
#include "mesr/autodiff.hpp"
#include "mesr/network.hpp"
#include "mesr/training.hpp"
#include "mesr/pipelines.hpp"
