#include <iostream>

#include "stprompt/cli.hpp"

int main(int argc, char** argv) { return stp::run_cli(argc, argv, std::cout, std::cerr); }
