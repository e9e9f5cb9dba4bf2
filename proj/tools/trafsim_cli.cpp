#include "trafsim/cli.hpp"

int main(int argc, char** argv) { return trafsim::run_cli(argc, argv); }
