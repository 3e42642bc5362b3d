#include "dctl_cli.hpp"

int main(int argc, char** argv) { return dctl::cli::run_cli(argc, argv); }
