#pragma once

#include "mfg/errors.hpp"
#include "mfg/parallel.hpp"
#include "mfg/random.hpp"
#include "mfg/space.hpp"
#include "mfg/projection.hpp"
#include "mfg/model.hpp"
#include "mfg/bestresponse.hpp"
#include "mfg/equilibrium.hpp"
#include "mfg/social.hpp"
#include "mfg/verify.hpp"
#include "mfg/cases.hpp"
