#include "f2v/cli.hpp"

int main(int argc, char** argv) { return f2v::run_cli(argc, argv); }
