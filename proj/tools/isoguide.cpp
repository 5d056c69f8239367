#include <iostream>

#include "isoguide/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv, argv + argc);
    return isoguide::cli::run(args, std::cout, std::cerr);
}
