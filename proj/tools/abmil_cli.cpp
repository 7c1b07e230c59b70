#include <iostream>

#include "abmil/cli.hpp"

int main(int argc, char** argv) { return abmil::cli::run(argc, argv, std::cout, std::cerr); }
