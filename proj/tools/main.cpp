#include "ahstn/cli.hpp"
#include "ahstn/tensor.hpp"

int main(int argc, char** argv) {
  ahstn::diff::tune_allocator();
  return ahstn::cli::run(argc, argv);
}
