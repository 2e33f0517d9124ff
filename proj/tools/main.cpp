#include "unfmri/cli.hpp"

int main(int argc, char** argv) { return unfmri::cli::run(argc, argv); }
