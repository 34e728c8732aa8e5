#include "commands.hpp"

int main(int argc, char** argv) { return aerodiff::cli::run_cli(argc, argv); }
