#include <iostream>

#include "pbtw/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return pbtw::cli_dispatch(args, std::cout, std::cerr);
}
