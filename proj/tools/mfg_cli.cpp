#include "mfg/cli.hpp"

int main(int argc, char** argv) { return mfg::cli::run(argc, argv); }
