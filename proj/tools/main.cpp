#include "vlmforge/cli.hpp"

int main(int argc, char** argv) { return vlmforge::run_cli(argc, argv); }
