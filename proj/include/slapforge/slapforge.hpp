#pragma once

#include "slapforge/error.hpp"
#include "slapforge/ordered_map.hpp"
#include "slapforge/core/model.hpp"
#include "slapforge/core/message.hpp"
#include "slapforge/profile/profile.hpp"
#include "slapforge/profile/resolve.hpp"
#include "slapforge/profile/plan.hpp"
#include "slapforge/profile/recipe.hpp"
#include "slapforge/master/master.hpp"
#include "slapforge/master/link.hpp"
#include "slapforge/master/socket.hpp"
#include "slapforge/node/simfs.hpp"
#include "slapforge/node/supervisor.hpp"
#include "slapforge/node/service.hpp"
#include "slapforge/node/agent.hpp"
#include "slapforge/mac/policy.hpp"
#include "slapforge/grid/grid.hpp"
#include "slapforge/grid/recipes.hpp"
#include "slapforge/grid/boinc_profiles.hpp"
#include "slapforge/sim/world.hpp"
#include "slapforge/sim/session.hpp"
