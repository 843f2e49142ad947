#pragma once

#include "elastic/alignment.hpp"
#include "elastic/analysis.hpp"
#include "elastic/curve.hpp"
#include "elastic/distance.hpp"
#include "elastic/elastic_mean.hpp"
#include "elastic/errors.hpp"
#include "elastic/random.hpp"
#include "elastic/simulate.hpp"
#include "elastic/srv_spline.hpp"
