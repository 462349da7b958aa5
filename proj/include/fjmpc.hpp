#pragma once

#include "fjmpc/errors.hpp"
#include "fjmpc/model.hpp"
#include "fjmpc/sp_core.hpp"
#include "fjmpc/controllers.hpp"
#include "fjmpc/simulate.hpp"
#include "fjmpc/qp.hpp"
#include "fjmpc/mpc.hpp"
#include "fjmpc/reference.hpp"
#include "fjmpc/scenarios.hpp"
