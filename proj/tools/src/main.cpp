#include <iostream>

#include "cactus/cli/commands.hpp"

int main(int argc, char** argv) { return cactus::cli::run_cli(argc, argv, std::cout, std::cerr); }
