#include <iostream>

#include "tgp/cli.hpp"

int main(int argc, char** argv) { return tgp::cli::run(argc, argv, std::cout, std::cerr); }
