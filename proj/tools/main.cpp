#include "svlvgp/cli.hpp"

int main(int argc, char** argv) { return svlvgp::cli::run(argc, argv); }
