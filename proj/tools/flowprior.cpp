#include <iostream>

#include "flowprior/cli.hpp"

int main(int argc, char** argv) { return flowprior::run_cli(argc, argv, std::cout, std::cerr); }
