#pragma once

#include "lithopatch/augmentation.hpp"
#include "lithopatch/boosting.hpp"
#include "lithopatch/color.hpp"
#include "lithopatch/deep_features.hpp"
#include "lithopatch/error.hpp"
#include "lithopatch/features.hpp"
#include "lithopatch/fixtures.hpp"
#include "lithopatch/forest.hpp"
#include "lithopatch/image.hpp"
#include "lithopatch/image_io.hpp"
#include "lithopatch/lbp.hpp"
#include "lithopatch/metrics.hpp"
#include "lithopatch/mlp_head.hpp"
#include "lithopatch/model_io.hpp"
#include "lithopatch/patch_sampling.hpp"
#include "lithopatch/projection.hpp"
#include "lithopatch/splits.hpp"
#include "lithopatch/tuning.hpp"
#include "lithopatch/pipeline/stages.hpp"
