#include "triggerlab/cli.hpp"

int main(int argc, char** argv) { return triggerlab::run_cli(argc, argv); }
