#include <string>
#include <vector>

#include "mcss/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return mcss::run_cli(args);
}
