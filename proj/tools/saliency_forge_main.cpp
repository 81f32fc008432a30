#include "saliency_forge/cli.hpp"

int main(int argc, char** argv) { return saliency_forge::run_cli(argc, argv); }
