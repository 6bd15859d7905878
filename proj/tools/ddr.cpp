#include <string>
#include <vector>

#include "ddr/cli.hpp"

int main(int argc, char** argv) { return ddr::run_cli(std::vector<std::string>(argv + 1, argv + argc)); }
