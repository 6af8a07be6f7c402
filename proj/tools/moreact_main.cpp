// Command-line entry point. Subcommands are wired up in cli.hpp; this file
// only translates exceptions into process exit codes.
#include <cstdio>
#include <exception>

#include "moreact/common.hpp"

int main(int argc, char** argv) {
  (void)argc;
  (void)argv;
  std::fprintf(stderr, "moreact: CLI not wired up yet\n");
  return 2;
}
