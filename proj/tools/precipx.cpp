#include <iostream>

#include "precipx/cli.hpp"

int main(int argc, char** argv) { return precipx::run_cli(argc, argv, std::cout, std::cerr); }
