#pragma once

#include "dynapyr/autodiff.hpp"
#include "dynapyr/checkpoint.hpp"
#include "dynapyr/config.hpp"
#include "dynapyr/conv.hpp"
#include "dynapyr/cost_model.hpp"
#include "dynapyr/csv.hpp"
#include "dynapyr/dataset.hpp"
#include "dynapyr/gradcheck.hpp"
#include "dynapyr/gumbel.hpp"
#include "dynapyr/model.hpp"
#include "dynapyr/pyramid.hpp"
#include "dynapyr/pyramid_config.hpp"
#include "dynapyr/rng.hpp"
#include "dynapyr/stats.hpp"
#include "dynapyr/tensor.hpp"
#include "dynapyr/train.hpp"

namespace dynapyr {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace dynapyr
