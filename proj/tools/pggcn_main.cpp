#include "pggcn/cli.hpp"

int main(int argc, char** argv) { return pggcn::run_cli(argc, argv); }
