#include "commands.hpp"

int main(int argc, char** argv) {
  return ncimpute::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
