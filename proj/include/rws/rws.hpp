#pragma once

#include "rws/baseline.hpp"
#include "rws/bench.hpp"
#include "rws/errors.hpp"
#include "rws/estfun.hpp"
#include "rws/kernel.hpp"
#include "rws/renew.hpp"
#include "rws/simgen.hpp"
#include "rws/spline.hpp"
#include "rws/store.hpp"
#include "rws/types.hpp"
