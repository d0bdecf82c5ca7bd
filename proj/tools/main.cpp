#include <iostream>

#include "t2c/cli.hpp"

int main(int argc, char** argv) { return t2c::run_cli(argc, argv, std::cout, std::cerr); }
