/// @file pvseg.hpp
/// @brief Umbrella header.

#pragma once

#include "airway.hpp"
#include "centerline.hpp"
#include "config.hpp"
#include "imageops.hpp"
#include "io.hpp"
#include "lungs.hpp"
#include "medialness.hpp"
#include "metaimage.hpp"
#include "metrics.hpp"
#include "parallel.hpp"
#include "phantom.hpp"
#include "pipeline.hpp"
#include "vesselseg.hpp"
#include "volume.hpp"
