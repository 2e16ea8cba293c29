#include <iostream>

#include "aem/cli.hpp"

int main(int argc, char** argv) { return aem::cli::run(argc, argv, std::cout, std::cerr); }
