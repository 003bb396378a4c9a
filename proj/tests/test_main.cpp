#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include "fairdummies/common.hpp"

int main(int argc, char** argv) {
  fairdummies::keep_large_allocations();
  doctest::Context context(argc, argv);
  return context.run();
}
