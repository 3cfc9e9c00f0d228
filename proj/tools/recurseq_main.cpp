#include <iostream>

#include "recurseq/commands.hpp"

int main(int argc, char** argv) {
  return recurseq::run_cli(argc, argv, {std::cin, std::cout, std::cerr});
}
