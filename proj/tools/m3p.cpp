// Copyright 2026 The m3p Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "m3p/cli.hpp"

int main(int argc, char** argv) {
  return m3p::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
