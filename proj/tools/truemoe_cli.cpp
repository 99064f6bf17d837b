#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "truemoe/config.hpp"
#include "truemoe/errors.hpp"
#include "truemoe/forge.hpp"
#include "truemoe/metrics.hpp"
#include "truemoe/pipeline.hpp"

using namespace truemoe;

namespace {

struct Options {
    std::string config_path;
    std::uint64_t seed = 0;
};

Config resolve(const Options& o) {
    Config c = load_config(o.config_path);
    c.seed = o.seed;
    return c;
}

void print_stats(const PhaseStats& stats) {
    for (const auto& [k, v] : stats) std::printf("%s\t%.17g\n", k.c_str(), v);
}

int gen_data(const Options& o) {
    const Config c = resolve(o);
    DatasetConfig dc;
    dc.root = c.data_root;
    dc.splits = c.splits;
    if (c.pinned_scale) dc.pinned_scale = c.pinned_scale;
    dc.seed = c.seed;
    for (const auto& m : build_dataset(dc)) {
        std::printf("%s\t%zu images\t%016llx\n", to_string(m.split).c_str(), m.entries.size(),
                    static_cast<unsigned long long>(m.content_hash));
    }
    return 0;
}

int run_phase(const Options& o, Phase p) {
    Session s(resolve(o));
    print_stats(s.run_phase(p));
    std::printf("checkpoint\t%s\n", checkpoint_path(s.config(), p).string().c_str());
    return 0;
}

std::filesystem::path baseline_report_file(const std::filesystem::path& report) {
    auto out = report;
    out.replace_filename(report.stem().string() + ".baseline" + report.extension().string());
    return out;
}

int eval(const Options& o) {
    Session s(resolve(o));
    s.load(Phase::routers);
    const auto& c = s.config();
    const auto ev = s.evaluate(parse_split(c.eval_split), perturbation_from_config(c));
    write_report(ev.truemoe, c.report_file());
    write_report(ev.baseline, baseline_report_file(c.report_file()));
    std::printf("%s", format_report(ev.truemoe).c_str());
    std::printf("usage_entropy\t%.17g\n", ev.usage_entropy);
    return 0;
}

int route_inspect(const Options& o) {
    Session s(resolve(o));
    s.load(Phase::routers);
    const auto& c = s.config();
    const Split split = parse_split(c.eval_split);
    const auto ev = s.evaluate(split, perturbation_from_config(c));
    write_routes(s.paths(split), ev.scores, c.route_file());
    std::printf("routes\t%zu\t%s\n", ev.scores.size(), c.route_file().string().c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"truemoe: dual-routing mixture of discriminative experts"};
    app.require_subcommand(1);
    Options opts;

    struct Command {
        const char* name;
        const char* help;
        std::function<int(const Options&)> run;
    };
    const std::vector<Command> commands = {
        {"gen-data", "write the synthetic dataset under data_root", gen_data},
        {"pretrain-ae", "pretrain the three manifold autoencoders",
         [](const Options& o) { return run_phase(o, Phase::pretrain_autoencoders); }},
        {"pretrain-mlre", "pretrain the multi-domain latent encoders",
         [](const Options& o) { return run_phase(o, Phase::pretrain_mlre); }},
        {"pretrain-gae", "pretrain the granularity-aware encoder",
         [](const Options& o) { return run_phase(o, Phase::pretrain_gae); }},
        {"cluster", "cluster GAE embeddings into six granularity groups",
         [](const Options& o) { return run_phase(o, Phase::cluster); }},
        {"train-experts", "jointly train the 18 expert heads",
         [](const Options& o) { return run_phase(o, Phase::experts_joint); }},
        {"finetune-experts", "fine-tune each expert on its granularity cluster",
         [](const Options& o) { return run_phase(o, Phase::experts_finetune); }},
        {"train-routers", "train the routing networks with experts frozen",
         [](const Options& o) { return run_phase(o, Phase::routers); }},
        {"eval", "score eval_split and write the metrics reports", eval},
        {"route-inspect", "write per-image routing records for eval_split", route_inspect},
    };

    const Command* chosen = nullptr;
    for (const auto& cmd : commands) {
        auto* sub = app.add_subcommand(cmd.name, cmd.help);
        sub->add_option("--config", opts.config_path, "config file (key = value)")->required();
        sub->add_option("--seed", opts.seed, "run seed")->required();
        sub->callback([&chosen, &cmd] { chosen = &cmd; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        return chosen->run(opts);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const StateError& e) {
        std::fprintf(stderr, "state error: %s\n", e.what());
        return 3;
    } catch (const IoError& e) {
        std::fprintf(stderr, "I/O error: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
