#include "risklab/cli.hpp"

int main(int argc, char** argv) { return risklab::run_cli(argc, argv); }
