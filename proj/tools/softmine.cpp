#include <iostream>
#include <string>
#include <vector>

#include "softmine/commands.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return softmine::run_cli(args, std::cout, std::cerr);
}
