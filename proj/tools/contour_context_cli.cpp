#include "contour_context/cli.hpp"

int main(int argc, char** argv) { return contour_context::cli::main_entry(argc, argv); }
