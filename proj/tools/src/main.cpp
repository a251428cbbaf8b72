#include "drsr_cli/cli.hpp"

int main(int argc, char** argv) { return drsr::cli::main_entry(argc, argv); }
