#include <iostream>

#include "dtam/cli.hpp"

int main(int argc, char** argv) { return dtam::run_cli(argc, argv, std::cout, std::cerr); }
