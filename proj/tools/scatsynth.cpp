#include <iostream>

#include "scatsynth/cli.hpp"

int main(int argc, char** argv) { return scatsynth::cli::run_cli(argc, argv, std::cout, std::cerr); }
