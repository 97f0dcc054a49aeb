#include <iostream>

#include "yynet/cli.hpp"

int main(int argc, char** argv) { return yynet::cli::run(argc, argv, std::cout, std::cerr); }
