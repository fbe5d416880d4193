#include <iostream>
#include <vector>

#include "tt/cli.hpp"

int main(int argc, char** argv) {
  return tt::run_cli(std::vector<std::string>(argv + 1, argv + argc),
                     std::cout, std::cerr);
}
