#define DOCTEST_CONFIG_IMPLEMENT
#include "doctest.h"
#include "occludox/harness.hpp"

int main(int argc, char** argv) {
  occludox::harness::tune_allocator();
  doctest::Context ctx(argc, argv);
  return ctx.run();
}
