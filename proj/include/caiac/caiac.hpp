#pragma once

#include "caiac/common.hpp"
#include "caiac/world.hpp"
#include "caiac/dataio.hpp"
#include "caiac/neural.hpp"
#include "caiac/influence.hpp"
#include "caiac/augment.hpp"
#include "caiac/evalharness.hpp"
#include "caiac/policy.hpp"
#include "caiac/config.hpp"
