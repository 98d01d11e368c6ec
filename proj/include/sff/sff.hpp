#ifndef SFF_SFF_HPP
#define SFF_SFF_HPP

#include "sff/boundary.hpp"
#include "sff/consistency.hpp"
#include "sff/core/geometry.hpp"
#include "sff/core/grid.hpp"
#include "sff/core/image_ops.hpp"
#include "sff/core/parallel.hpp"
#include "sff/core/visibility_masks.hpp"
#include "sff/eval.hpp"
#include "sff/features.hpp"
#include "sff/interpolate.hpp"
#include "sff/io.hpp"
#include "sff/knn.hpp"
#include "sff/matcher.hpp"
#include "sff/pipeline.hpp"
#include "sff/refine.hpp"
#include "sff/synth.hpp"
#include "sff/visibility.hpp"
#include "sff/viz.hpp"

#endif  // SFF_SFF_HPP
