#include "bpre/cli.hpp"

int main(int argc, char** argv) { return bpre::main_entry(argc, argv); }
