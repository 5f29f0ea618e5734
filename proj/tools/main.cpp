#include "csdenoise/cli.hpp"

int main(int argc, char** argv) { return csd::cli_main(argc, argv); }
