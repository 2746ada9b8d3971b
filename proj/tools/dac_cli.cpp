#include "dac/cli.hpp"

int main(int argc, char** argv) { return dac::cli::run(argc, argv); }
