#include "vga/cli.hpp"

int main(int argc, char** argv) { return vga::cli::run(argc, argv); }
