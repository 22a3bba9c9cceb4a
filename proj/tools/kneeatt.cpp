#include <iostream>

#include "kneeatt/cli.hpp"

int main(int argc, char** argv) { return kneeatt::run_cli(argc, argv, std::cout, std::cerr); }
