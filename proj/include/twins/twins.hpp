#pragma once

#include "twins/analysis.hpp"
#include "twins/attention.hpp"
#include "twins/blocks.hpp"
#include "twins/checkpoint.hpp"
#include "twins/conv.hpp"
#include "twins/counters.hpp"
#include "twins/data.hpp"
#include "twins/model.hpp"
#include "twins/ops.hpp"
#include "twins/rng.hpp"
#include "twins/tensor.hpp"
#include "twins/train.hpp"
#include "twins/verify.hpp"
