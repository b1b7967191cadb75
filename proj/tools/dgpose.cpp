#include "dgpose/interface/cli.hpp"

int main(int argc, char** argv) { return dgpose::interface::run_cli({argv, argv + argc}); }
