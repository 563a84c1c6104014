#include "emoattn/cli.hpp"

int main(int argc, char** argv) { return emoattn::cli::run(argc, argv); }
