#include <iostream>

#include "can/cli/cli.hpp"

int main(int argc, char** argv) { return can::cli::run(argc, argv, std::cout, std::cerr); }
