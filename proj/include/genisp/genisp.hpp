#pragma once

#include "genisp/tensor.hpp"
#include "genisp/kernels.hpp"
#include "genisp/autodiff.hpp"
#include "genisp/grad_check.hpp"
#include "genisp/raw_pipeline.hpp"
#include "genisp/color_modules.hpp"
#include "genisp/enhancement_net.hpp"
#include "genisp/model.hpp"
#include "genisp/losses.hpp"
#include "genisp/trainer.hpp"
#include "genisp/detection_metrics.hpp"
#include "genisp/io/graw.hpp"
#include "genisp/io/ppm.hpp"
#include "genisp/io/weights.hpp"
#include "genisp/io/annotations.hpp"
#include "genisp/io/config.hpp"
