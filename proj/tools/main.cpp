#include <iostream>

#include "jmcal/cli.hpp"

int main(int argc, char** argv) { return jmcal::run_cli(argc, argv, std::cout, std::cerr); }
