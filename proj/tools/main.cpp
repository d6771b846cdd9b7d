#include "tgavc/cli.hpp"

int main(int argc, char** argv) { return tgavc::cli::run(argc, argv); }
