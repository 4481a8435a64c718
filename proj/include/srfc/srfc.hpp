#pragma once

#include "srfc/dataset.hpp"
#include "srfc/manifest.hpp"
#include "srfc/metrics.hpp"
#include "srfc/models.hpp"
#include "srfc/params.hpp"
#include "srfc/plot.hpp"
#include "srfc/rewards.hpp"
#include "srfc/rng.hpp"
#include "srfc/synth.hpp"
#include "srfc/tensor.hpp"
#include "srfc/text.hpp"
#include "srfc/training.hpp"
