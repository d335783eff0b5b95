#include "cli.hpp"

int main(int argc, char** argv) { return ga::cli::run(argc, argv); }
