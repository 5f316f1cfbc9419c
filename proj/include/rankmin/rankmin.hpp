#pragma once

#include "rankmin/errors.hpp"
#include "rankmin/geometry.hpp"
#include "rankmin/harness.hpp"
#include "rankmin/matcore.hpp"
#include "rankmin/objectives.hpp"
#include "rankmin/random.hpp"
#include "rankmin/solvers.hpp"
