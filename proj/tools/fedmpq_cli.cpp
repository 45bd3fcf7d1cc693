// Copyright 2026 The fedmpq Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "fedmpq/cli.hpp"

int main(int argc, char** argv) { return fedmpq::run_cli(argc, argv, std::cout, std::cerr); }
