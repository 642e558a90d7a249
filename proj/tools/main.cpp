#include "metaflow/cli.hpp"

int main(int argc, char** argv) {
    return metaflow::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
