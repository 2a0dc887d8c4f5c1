#include <iostream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "malloc_tuning.hpp"

int main(int argc, char** argv) {
    nafrssr::cli::tune_allocator();
    std::vector<std::string> args(argv + 1, argv + argc);
    return nafrssr::cli::run(args, std::cout, std::cerr);
}
