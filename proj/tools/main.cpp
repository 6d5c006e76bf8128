#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "fedht/error.hpp"
#include "fedht/experiment.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Federated sparse learning experiments"};
    app.require_subcommand(1, 1);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    for (const char* name : {"generate", "run", "compare", "theory"}) {
        auto* sub = app.add_subcommand(name);
        sub->add_option("--config", config_path, "configuration file")->required()->check(CLI::ExistingFile);
        sub->add_option("--seed", seed, "seed for data generation, partitioning and the run");
        sub->add_option("--out", out_dir, "output directory");
    }
    CLI11_PARSE(app, argc, argv);

    const std::string cmd = app.get_subcommands().front()->get_name();
    try {
        auto cfg = fedht::load_config(config_path);
        if (seed) fedht::override_seed(cfg, *seed);
        if (out_dir) cfg.output_dir = *out_dir;
        if (cmd == "generate") return fedht::cmd_generate(cfg, std::cerr);
        if (cmd == "run") return fedht::cmd_run(cfg, std::cerr);
        if (cmd == "compare") return fedht::cmd_compare(cfg, std::cerr);
        return fedht::cmd_theory(cfg, std::cout);
    } catch (const fedht::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
