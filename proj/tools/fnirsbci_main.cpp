#include <iostream>

#include "fnirs/cli.hpp"

int main(int argc, char** argv) {
  return fnirs::cli::run_cli(argc, argv, std::cout, std::cerr);
}
