#include <iostream>

#include "ate/runtime.hpp"
#include "cli.hpp"

int main(int argc, char** argv) {
  ate::tune_allocator();
  std::vector<std::string> args(argv, argv + argc);
  return ate::cli::run(args, std::cout, std::cerr);
}
