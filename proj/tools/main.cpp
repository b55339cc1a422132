#include <string>
#include <vector>

#include "popmech/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return popmech::cli::run_cli(args);
}
