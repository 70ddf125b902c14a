#include "ins_cli/commands.hpp"

int main(int argc, char** argv) { return ins::cli::run(argc, argv); }
