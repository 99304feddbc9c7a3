#include "ticketlab/cli.hpp"

int main(int argc, char** argv) { return ticketlab::run_cli(argc, argv); }
