#include <iostream>

#include "nnspec/cli.hpp"

int main(int argc, char** argv) { return nnspec::run_cli(argc, argv, std::cout, std::cerr); }
