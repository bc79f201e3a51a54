#include <string>
#include <vector>

#include "ims/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return ims::cli::run(args);
}
