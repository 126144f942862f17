#pragma once

#include "mda/tensor.hpp"
#include "mda/ops.hpp"
#include "mda/assignment.hpp"
#include "mda/mda_layer.hpp"
#include "mda/objective.hpp"
#include "mda/idx.hpp"
#include "mda/data.hpp"
#include "mda/network.hpp"
#include "mda/metrics.hpp"
#include "mda/train.hpp"
#include "mda/gradcheck.hpp"
#include "mda/config.hpp"
#include "mda/checkpoint.hpp"
#include "mda/experiments.hpp"
