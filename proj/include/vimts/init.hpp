#pragma once

#include "vimts/autodiff.hpp"

#include <random>

namespace vimts::init {

ad::Matrix xavier_uniform(Eigen::Index fan_in, Eigen::Index fan_out, std::mt19937_64& rng);
ad::Matrix normal(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64& rng);
ad::Matrix uniform(Eigen::Index rows, Eigen::Index cols, double lo, double hi, std::mt19937_64& rng);

}  // namespace vimts::init
