#pragma once

#include "gsfm/config.hpp"
#include "gsfm/csv.hpp"
#include "gsfm/data.hpp"
#include "gsfm/ddp.hpp"
#include "gsfm/diagnostics.hpp"
#include "gsfm/error.hpp"
#include "gsfm/fit.hpp"
#include "gsfm/km.hpp"
#include "gsfm/model.hpp"
#include "gsfm/nuts.hpp"
#include "gsfm/simgen.hpp"
#include "gsfm/special.hpp"
