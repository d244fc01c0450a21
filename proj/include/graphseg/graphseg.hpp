#pragma once

#include "graphseg/backends.hpp"
#include "graphseg/classifier.hpp"
#include "graphseg/classifier_types.hpp"
#include "graphseg/common.hpp"
#include "graphseg/datasets.hpp"
#include "graphseg/harness.hpp"
#include "graphseg/image.hpp"
#include "graphseg/image_io.hpp"
#include "graphseg/metrics.hpp"
#include "graphseg/mock_backends.hpp"
#include "graphseg/prompt_engine.hpp"
#include "graphseg/scene_graph.hpp"
#include "graphseg/segmenter.hpp"
#include "graphseg/training.hpp"
