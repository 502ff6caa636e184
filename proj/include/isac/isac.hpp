#pragma once

// Umbrella header for the ISAC simulation toolkit.

#include "isac/common.hpp"
#include "isac/csv.hpp"
#include "isac/dts.hpp"
#include "isac/estimation.hpp"
#include "isac/geometry.hpp"
#include "isac/netmgmt.hpp"
#include "isac/omr.hpp"
#include "isac/phy.hpp"
#include "isac/rng.hpp"
#include "isac/runner.hpp"
#include "isac/scenario.hpp"
#include "isac/scene.hpp"
#include "isac/ser.hpp"
#include "isac/tensor.hpp"
