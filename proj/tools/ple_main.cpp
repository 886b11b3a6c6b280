#include <iostream>

#include "ple/cli.hpp"

int main(int argc, char** argv) { return ple::run_cli(argc, argv, std::cout, std::cerr); }
