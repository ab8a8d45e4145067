// Copyright (C) 2026 The rewardcal Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "rewardcal/cli.hpp"

int main(int argc, char** argv) { return rewardcal::run_cli(argc, argv, std::cout, std::cerr); }
