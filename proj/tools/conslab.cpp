#include "conslab/cli.hpp"

int main(int argc, char** argv) { return conslab::cli::main(argc, argv); }
