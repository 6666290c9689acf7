#include "cli.hpp"

int main(int argc, char** argv) { return gtree::cli::run(argc, argv); }
