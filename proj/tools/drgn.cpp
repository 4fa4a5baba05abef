#include "drgn/cli/cli.hpp"

int main(int argc, char** argv) { return drgn::cli::run(argc, argv); }
