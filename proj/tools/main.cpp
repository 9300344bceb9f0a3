#include "cli.hpp"

int main(int argc, char** argv) { return dbcd::cli::run(argc, argv); }
