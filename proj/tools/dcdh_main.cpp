#include "dcdh/cli.hpp"

int main(int argc, char** argv) { return dcdh::cli::run(argc, argv); }
