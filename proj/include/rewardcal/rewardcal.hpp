// Copyright (C) 2026 The rewardcal Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Umbrella header for the library proper (no CLI, no network client).

#include "rewardcal/calib.hpp"
#include "rewardcal/datamodel.hpp"
#include "rewardcal/error.hpp"
#include "rewardcal/fewshot.hpp"
#include "rewardcal/jsonl.hpp"
#include "rewardcal/metrics.hpp"
#include "rewardcal/overoptsim.hpp"
#include "rewardcal/promptsynth.hpp"
#include "rewardcal/report.hpp"
#include "rewardcal/selection.hpp"
