#include "rsr/cli.hpp"

int main(int argc, char** argv) { return rsr::cli::run(argc, argv); }
