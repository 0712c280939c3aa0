#include "picirc/cli.hpp"

int main(int argc, char** argv) { return picirc::cli::run(argc, argv); }
