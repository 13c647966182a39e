#include "dudo/cli/commands.hpp"

int main(int argc, char** argv) { return dudo::cli::run(argc, argv); }
