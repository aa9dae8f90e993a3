#pragma once

// Convenience header pulling in the whole library.

#include "mlcalib/error.hpp"
#include "mlcalib/geometry.hpp"
#include "mlcalib/motion.hpp"
#include "mlcalib/point_cloud.hpp"
#include "mlcalib/simulation.hpp"
#include "mlcalib/handeye.hpp"
#include "mlcalib/kdtree.hpp"
#include "mlcalib/refinement.hpp"
#include "mlcalib/io.hpp"
#include "mlcalib/pipeline.hpp"
