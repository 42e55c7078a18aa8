#include <malloc.h>

#include <iostream>

#include "ccr/cli.hpp"

int main(int argc, char** argv) {
  // Conv buffers are large and short-lived; keep them on the heap instead of
  // paying an mmap/munmap pair per op.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  return ccr::run_cli(argc, argv, std::cout, std::cerr);
}
