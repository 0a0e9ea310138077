// Copyright 2026 The sacon Authors.
// SPDX-License-Identifier: Apache-2.0
#include "sacon/lab.hpp"

#include <iostream>

int main(int argc, char** argv) { return sacon::run_lab(argc, argv, std::cout, std::cerr); }
