#include <iostream>
#include <string>
#include <vector>

#include "circuit_lab/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return circuit_lab::cli_main(args, std::cout, std::cerr);
}
