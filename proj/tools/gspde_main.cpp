#include <iostream>

#include "gspde/cli.hpp"

int main(int argc, char** argv) { return gspde::run_cli(argc, argv, std::cout, std::cerr); }
