#pragma once

#include "meca/alignment.hpp"
#include "meca/data.hpp"
#include "meca/error.hpp"
#include "meca/matrix.hpp"
#include "meca/network.hpp"
#include "meca/selection.hpp"
#include "meca/spd.hpp"
#include "meca/trainer.hpp"
#include "meca/verify.hpp"

namespace meca {

#ifdef MECA_VERSION
inline constexpr const char* kVersion = MECA_VERSION;
#else
inline constexpr const char* kVersion = "unknown";
#endif

}  // namespace meca
