#include "attg/cli.hpp"

int main(int argc, char** argv) { return attg::run_cli(argc, argv); }
