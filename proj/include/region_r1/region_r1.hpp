#pragma once

#include "region_r1/crop_env.hpp"
#include "region_r1/dataset.hpp"
#include "region_r1/decision_parser.hpp"
#include "region_r1/errors.hpp"
#include "region_r1/harness.hpp"
#include "region_r1/ir_metrics.hpp"
#include "region_r1/parallel.hpp"
#include "region_r1/policy.hpp"
#include "region_r1/reports.hpp"
#include "region_r1/reward.hpp"
#include "region_r1/rgrpo.hpp"
#include "region_r1/rng.hpp"
#include "region_r1/scoring.hpp"
