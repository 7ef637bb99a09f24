#include "rmlab/cli.hpp"

int main(int argc, char** argv) { return rmlab::cli::run(argc, argv); }
