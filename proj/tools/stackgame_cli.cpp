#include <iostream>

#include "stackgame/cli.hpp"

int main(int argc, char** argv) { return stackgame::run(argc, argv, std::cout, std::cerr); }
