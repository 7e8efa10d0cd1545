#include <string>
#include <vector>

#include "bcrl/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return bcrl::cli::run_cli(args);
}
