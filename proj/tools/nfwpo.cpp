#include <iostream>

#include "nfwpo/cli.hpp"

int main(int argc, char** argv) { return nfwpo::cli::run(argc, argv, std::cout, std::cerr); }
