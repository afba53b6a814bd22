#include <iostream>

#include "ordergap/cli.hpp"

int main(int argc, char** argv) { return ordergap::run_cli(argc, argv, std::cout, std::cerr); }
