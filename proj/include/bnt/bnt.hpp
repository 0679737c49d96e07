#pragma once

#include "bnt/bcart.hpp"
#include "bnt/bnn.hpp"
#include "bnt/cart.hpp"
#include "bnt/dataset.hpp"
#include "bnt/error.hpp"
#include "bnt/experiment.hpp"
#include "bnt/metrics.hpp"
#include "bnt/mlp.hpp"
#include "bnt/pipeline.hpp"
#include "bnt/random.hpp"
#include "bnt/selection.hpp"
#include "bnt/sum_of_trees.hpp"
#include "bnt/tree.hpp"
