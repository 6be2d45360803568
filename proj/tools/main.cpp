#include "musiscene/cli.hpp"

int main(int argc, char** argv) { return musiscene::cli::run(argc, argv); }
