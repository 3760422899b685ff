#include <iostream>
#include <string>
#include <vector>

#include "ldml_cli/cli.hpp"

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv, argv + argc);
  return ldml::cli::run(args, std::cout, std::cerr);
}
