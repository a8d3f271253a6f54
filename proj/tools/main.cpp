#include <iostream>

#include "lrmt/cli.hpp"

int main(int argc, char** argv) { return lrmt::cli::run(argc, argv, std::cout, std::cerr); }
