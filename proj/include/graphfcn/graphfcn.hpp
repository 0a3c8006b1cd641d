#pragma once

#include "graphfcn/autodiff.hpp"
#include "graphfcn/backbone.hpp"
#include "graphfcn/checkpoint.hpp"
#include "graphfcn/data.hpp"
#include "graphfcn/errors.hpp"
#include "graphfcn/gcn.hpp"
#include "graphfcn/graph.hpp"
#include "graphfcn/labels.hpp"
#include "graphfcn/metrics.hpp"
#include "graphfcn/model.hpp"
#include "graphfcn/params.hpp"
#include "graphfcn/sparse.hpp"
#include "graphfcn/spectral.hpp"
#include "graphfcn/tensor.hpp"
#include "graphfcn/training.hpp"
#include "graphfcn/gradcheck.hpp"
