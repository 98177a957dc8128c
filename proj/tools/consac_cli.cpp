#include "consac/cli.hpp"

int main(int argc, char** argv) { return consac::cli::run_command(argc, argv); }
