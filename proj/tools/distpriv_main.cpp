#include <iostream>

#include "distpriv/cli.hpp"

int main(int argc, char** argv) { return distpriv::run_cli(argc, argv, std::cout, std::cerr); }
