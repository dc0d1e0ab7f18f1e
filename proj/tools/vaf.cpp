// vaf <stage> --config <path> [--set key=value]... [--seed N] [--threads N]

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "vaf/pipeline.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Visual acoustic fields pipeline"};
    std::string stage;
    std::string config_path;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    std::string progress_path;
    bool quiet = false;
    bool print_config = false;

    app.add_option("stage", stage, "scene | dataset | embed | field | gen-train | gen-eval | loc-eval | report | all")
        ->required();
    app.add_option("--config", config_path, "pipeline config (JSON)");
    app.add_option("--set", overrides, "override a dotted config key, e.g. diffusion.steps=2000");
    app.add_option("--seed", seed, "use this seed for every stage");
    app.add_option("--threads", threads, "worker thread cap");
    app.add_option("--progress", progress_path, "append JSON-lines progress events to this file");
    app.add_flag("--quiet", quiet, "no log lines on stderr");
    app.add_flag("--print-config", print_config, "print the resolved config and exit");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        if (seed)
            for (const char* k : {"scene", "dataset", "embed", "generate", "evaluate"})
                overrides.push_back(std::string("seeds.") + k + "=" + std::to_string(*seed));
        if (threads) overrides.push_back("threads=" + std::to_string(*threads));
        const vaf::PipelineConfig cfg =
            vaf::load_config(config_path.empty() ? std::nullopt : std::optional<std::filesystem::path>(config_path), overrides);
        if (print_config) {
            std::cout << vaf::to_json(cfg).dump(2) << "\n";
            return 0;
        }
        vaf::Pipeline pipeline(cfg, vaf::Progress(progress_path.empty() ? std::nullopt
                                                                        : std::optional<std::filesystem::path>(progress_path),
                                                  quiet));
        if (stage == "all")
            pipeline.run_all();
        else
            pipeline.run(vaf::stage_from_name(stage));
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "vaf: error: " << e.what() << "\n";
        return vaf::exit_code_for(e);
    }
}
