#include "ucf/cli/app.hpp"

int main(int argc, char** argv) { return ucf::cli::main_entry(argc, argv); }
