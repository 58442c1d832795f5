#pragma once

#include "streetreview/core.hpp"
#include "streetreview/dataset.hpp"
#include "streetreview/evaluation.hpp"
#include "streetreview/geospatial.hpp"
#include "streetreview/model.hpp"
#include "streetreview/ratings.hpp"
#include "streetreview/segmentation.hpp"
#include "streetreview/service.hpp"
#include "streetreview/stats.hpp"
#include "streetreview/synthetic.hpp"
#include "streetreview/thematics.hpp"
#include "streetreview/training.hpp"
