#include "vigil/report.hpp"

#include <iostream>

int main(int argc, char** argv) { return vigil::run_cli(argc, argv, std::cout, std::cerr); }
