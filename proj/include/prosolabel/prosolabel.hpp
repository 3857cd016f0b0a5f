#pragma once

#include "prosolabel/autodiff.hpp"
#include "prosolabel/corpus.hpp"
#include "prosolabel/dsp.hpp"
#include "prosolabel/error.hpp"
#include "prosolabel/features.hpp"
#include "prosolabel/manifest.hpp"
#include "prosolabel/matrix.hpp"
#include "prosolabel/metrics.hpp"
#include "prosolabel/model.hpp"
#include "prosolabel/pipeline.hpp"
#include "prosolabel/random.hpp"
#include "prosolabel/synth.hpp"
#include "prosolabel/train.hpp"
#include "prosolabel/wav.hpp"
