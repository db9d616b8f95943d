#include <iostream>

#include "retino/cli.hpp"

int main(int argc, char** argv) { return retino::cli::run(argc, argv, std::cout, std::cerr); }
