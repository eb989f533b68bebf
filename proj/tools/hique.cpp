#include <iostream>
#include <string>
#include <vector>

#include "hique/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return hique::run_cli(args, std::cout, std::cerr);
}
