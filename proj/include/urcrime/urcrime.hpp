#pragma once

#include "urcrime/error.hpp"
#include "urcrime/date.hpp"
#include "urcrime/csv.hpp"
#include "urcrime/array.hpp"
#include "urcrime/geo_features.hpp"
#include "urcrime/ingest.hpp"
#include "urcrime/autodiff.hpp"
#include "urcrime/model.hpp"
#include "urcrime/training.hpp"
#include "urcrime/evaluate.hpp"
#include "urcrime/synth.hpp"
#include "urcrime/config.hpp"
#include "urcrime/pipeline.hpp"
