#include "rsgen/pipeline.hpp"

int main(int argc, char** argv) { return rsgen::pipeline::run_command(argc, argv); }
