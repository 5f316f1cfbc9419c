#include "rankmin/cli.hpp"

int main(int argc, char** argv) { return rankmin::cli_main(argc, argv); }
