#include "foem/cli.hpp"

int main(int argc, char** argv) { return foem::cli::run_main(argc, argv); }
