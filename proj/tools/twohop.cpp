#include "twohop/cli.hpp"

int main(int argc, char** argv) { return twohop::cli::entry(argc, argv); }
