#include "kinship/cli.hpp"

int main(int argc, char** argv) { return kinship::cli::run(argc, argv); }
