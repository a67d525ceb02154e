#include <spdlog/spdlog.h>

#include "commands.hpp"

int main(int argc, char** argv) {
  spdlog::set_pattern("[%l] %v");
  return gaf::cli::run(argc, argv);
}
