#include "commands.hpp"

int main(int argc, char** argv) { return convqa::cli::run_cli(argc, argv); }
