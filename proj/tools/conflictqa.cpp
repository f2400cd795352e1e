#include <iostream>

#include "conflictqa/cli.hpp"

int main(int argc, char** argv) { return conflictqa::cli::run(argc, argv, std::cout, std::cerr); }
