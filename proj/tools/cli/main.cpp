#include "commands.hpp"

int main(int argc, char** argv) { return kifsod::cli::run(argc, argv); }
