#pragma once

#include "pstrat/common.hpp"
#include "pstrat/dataset.hpp"
#include "pstrat/em.hpp"
#include "pstrat/estimands.hpp"
#include "pstrat/model.hpp"
#include "pstrat/propensity.hpp"
#include "pstrat/sensitivity.hpp"
#include "pstrat/simulate.hpp"
