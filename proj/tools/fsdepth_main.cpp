#include <iostream>

#include "fsdepth/cli.hpp"

int main(int argc, char** argv) { return fsdepth::cli::run(argc, argv, std::cout, std::cerr); }
