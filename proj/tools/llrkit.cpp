#include <iostream>

#include "llrkit/cli.hpp"

int main(int argc, char** argv) {
  return llrkit::cli::run({argv + 1, argv + argc}, std::cout, std::cerr);
}
