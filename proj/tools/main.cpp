#include <iostream>

#include "cli.hpp"

int main(int argc, char** argv) {
  return tunein::cli::run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
