#include "simplexfit/commands.hpp"

int main(int argc, char** argv) { return simplexfit::commands::run_cli(argc, argv); }
