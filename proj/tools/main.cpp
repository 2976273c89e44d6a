#include "cli.hpp"

int main(int argc, char** argv) { return agepro::cli::run(argc, argv); }
