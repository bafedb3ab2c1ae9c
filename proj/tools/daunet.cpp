#include <iostream>

#include "daunet/cli.hpp"

int main(int argc, char** argv) { return daunet::cli::run(argc, argv, std::cout, std::cerr); }
