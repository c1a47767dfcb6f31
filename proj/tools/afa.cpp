#include "afa/cli.hpp"

int main(int argc, char** argv) { return afa::cli::run_cli(argc, argv); }
