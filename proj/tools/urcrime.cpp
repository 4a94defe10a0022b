// Command-line entry point: urcrime <synth|train|predict|evaluate|compare>
//   --config <path> [--seed <u64>] [--out <dir>]

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "urcrime/pipeline.hpp"

namespace {

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '"' || c == '\\') out += '\\';
        out += c == '\n' ? ' ' : c;
    }
    return out;
}

int fail(const std::string& kind, const std::string& message) {
    std::cerr << "error: code=" << kind << " message=\"" << escape(message) << "\"\n";
    return 2;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Under-reporting-aware crime hotspot prediction"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    const std::vector<std::pair<std::string, std::string>> commands{
        {"synth", "generate a synthetic city and its oracle"},
        {"train", "train every configured variant"},
        {"predict", "predict the test period with trained checkpoints"},
        {"evaluate", "hotspot F1 and fairness reports"},
        {"compare", "improvement table between two models"},
    };
    for (const auto& [name, help] : commands) {
        CLI::App* sub = app.add_subcommand(name, help);
        sub->add_option("--config", config_path, "run configuration file")->required();
        sub->add_option("--seed", seed, "override run.seed");
        sub->add_option("--out", out, "override run.out");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        return fail("usage", e.what());
    }

    try {
        const urcrime::RunConfig rc =
            urcrime::load_run_config(urcrime::ConfigFile::load(config_path), seed, out);
        const std::string name = app.get_subcommands().front()->get_name();
        urcrime::CommandResult result;
        if (name == "synth") result = urcrime::cmd_synth(rc);
        else if (name == "train") result = urcrime::cmd_train(rc);
        else if (name == "predict") result = urcrime::cmd_predict(rc);
        else if (name == "evaluate") result = urcrime::cmd_evaluate(rc);
        else result = urcrime::cmd_compare(rc);
        std::cout << result.summary;
        for (const auto& path : result.outputs) std::cout << "wrote " << path << "\n";
        return 0;
    } catch (const urcrime::Error& e) {
        return fail(e.kind(), e.what());
    } catch (const std::exception& e) {
        return fail("internal", e.what());
    }
}
