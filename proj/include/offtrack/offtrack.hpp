#pragma once

#include "offtrack/error.hpp"
#include "offtrack/hash.hpp"
#include "offtrack/core.hpp"
#include "offtrack/segmenter.hpp"
#include "offtrack/verifier.hpp"
#include "offtrack/metrics.hpp"
#include "offtrack/testgen.hpp"
#include "offtrack/gateway.hpp"
#include "offtrack/reporter.hpp"
#include "offtrack/simreasoner.hpp"
#include "offtrack/pipeline.hpp"
