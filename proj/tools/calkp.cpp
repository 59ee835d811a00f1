#include "cal/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return cal::cli_main(argc, argv, std::cout, std::cerr); }
