#pragma once

#include "lscrf/error.hpp"
#include "lscrf/parallel.hpp"
#include "lscrf/graph.hpp"
#include "lscrf/inference.hpp"
#include "lscrf/regress.hpp"
#include "lscrf/train.hpp"
#include "lscrf/predict.hpp"
#include "lscrf/baselines.hpp"
#include "lscrf/corpus.hpp"
#include "lscrf/synth.hpp"
