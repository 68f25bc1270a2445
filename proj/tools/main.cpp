#include "mvhjm/cli.hpp"

int main(int argc, char** argv) { return mvhjm::cli::run_main(argc, argv); }
