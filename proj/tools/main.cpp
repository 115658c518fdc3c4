#include <iostream>

#include "mtpc/cli.hpp"

int main(int argc, char** argv) { return mtpc::run_cli(argc, argv, std::cout, std::cerr); }
