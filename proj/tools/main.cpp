#include "slowmodes/cli.hpp"

int main(int argc, char** argv) { return slowmodes::cli::run(argc, argv); }
