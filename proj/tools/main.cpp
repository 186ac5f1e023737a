#include "hr3d/cli.hpp"

int main(int argc, char** argv) { return hr3d::cli_main(argc, argv); }
