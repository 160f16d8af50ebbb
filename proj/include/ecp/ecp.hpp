#pragma once

#include "ecp/conformal.hpp"
#include "ecp/dataset.hpp"
#include "ecp/error.hpp"
#include "ecp/evidential.hpp"
#include "ecp/experiment.hpp"
#include "ecp/metrics.hpp"
#include "ecp/report.hpp"
#include "ecp/scores.hpp"
#include "ecp/synth.hpp"
