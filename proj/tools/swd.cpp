#include <iostream>

#include "swd/cli.h"

int main(int argc, char** argv) { return swd::cli_main(argc, argv, std::cout, std::cerr); }
