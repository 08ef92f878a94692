#include <iostream>

#include "vacseg/config.hpp"
#include "vacseg/pipeline.hpp"

int main(int argc, char** argv) {
    vacseg::ParsedConfig parsed;
    try {
        parsed = vacseg::parse_config(argc, argv);
    } catch (const vacseg::ConfigError& e) {
        std::cerr << "error [config] " << e.what() << "\n";
        return 2;
    }
    if (parsed.help) {
        std::cout << *parsed.help;
        return 0;
    }
    return vacseg::run_pipeline(parsed.config);
}
