#pragma once

// Umbrella header for the whole library.

#include "cnn.hpp"
#include "config.hpp"
#include "descriptor.hpp"
#include "detection.hpp"
#include "error.hpp"
#include "evaluation.hpp"
#include "hog.hpp"
#include "imaging.hpp"
#include "model_io.hpp"
#include "motion_saliency.hpp"
#include "pipeline.hpp"
#include "svm.hpp"
#include "synth.hpp"
#include "temporal_features.hpp"
#include "tracking.hpp"
#include "vocabulary.hpp"
