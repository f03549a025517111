#include "cmwno/config.hpp"
#include "cmwno/error.hpp"
#include "cmwno/harness.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

namespace {

using namespace cmwno;

[[noreturn]] void fail(const char* kind, int code, std::string msg) {
    for (auto& ch : msg)
        if (ch == '\n' || ch == '\r') ch = ' ';
    std::cerr << "cmwno: error: " << kind << ": " << msg << std::endl;
    std::exit(code);
}

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string model;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config, "experiment config (INI: [experiment] [model] [datagen] [train] [eval] [sweep])");
    cmd->add_option("--seed", c.seed, "override experiment.seed");
    cmd->add_option("--out", c.out, "override experiment.out");
    cmd->add_option("--model", c.model, "override model.kind (cmwno | mwt_s | mwt_c)");
}

ExperimentConfig resolve(const Common& c) {
    ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : load_config(c.config);
    if (c.seed) cfg.seed = *c.seed;
    if (!c.out.empty()) cfg.out = c.out;
    if (!c.model.empty()) cfg.kind = model::parse_model_kind(c.model);
    cfg.validate();
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"coupled multiwavelet neural operators: data, training, evaluation"};
    app.require_subcommand(1);

    Common common;
    auto* gen = app.add_subcommand("generate", "generate train/test datasets");
    add_common(gen, common);

    harness::TrainOptions topts;
    auto* train = app.add_subcommand("train", "train one model per target time");
    add_common(train, common);
    train->add_flag("--resume", topts.resume, "continue from the saved training state");
    train->add_option("--stop-after", topts.stop_after, "stop after this epoch, leaving resumable state");

    harness::EvalOptions eopts;
    auto* eval = app.add_subcommand("eval", "relative L2 per variable per resolution");
    add_common(eval, common);
    eval->add_option("--checkpoint", eopts.checkpoints, "checkpoint(s); default every model_t<j>.ckpt in --out");
    eval->add_option("--dataset", eopts.dataset, "test dataset; default from config");
    eval->add_flag("--oracle", eopts.oracle, "score the truth against itself");
    eval->add_option("--csv", eopts.csv, "output CSV; default <out>/eval.csv");

    auto* sweep = app.add_subcommand("sweep-lambda", "train and evaluate every model per coupling strength");
    add_common(sweep, common);

    harness::InspectOptions iopts;
    double constant = 0.0;
    auto* inspect = app.add_subcommand("inspect", "diagnostic dumps: filters | coeffs | gradcheck");
    inspect->add_option("what", iopts.what, "filters | coeffs | gradcheck")->required();
    inspect->add_option("--k", iopts.k, "multiwavelet order");
    inspect->add_option("--dataset", iopts.dataset, "coeffs: dataset file");
    inspect->add_option("--sample", iopts.sample, "coeffs: sample index");
    inspect->add_option("--variable", iopts.variable, "coeffs: variable name");
    inspect->add_option("--time", iopts.time, "coeffs: timestamp");
    auto* const_opt = inspect->add_option("--constant", constant, "coeffs: constant field value");
    inspect->add_option("--resolution", iopts.resolution, "coeffs: grid size for --constant");
    inspect->add_option("--seed", iopts.seed, "gradcheck: random seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        fail("config", 2, e.what());
    }

    try {
        if (*gen) {
            for (const auto& f : harness::cmd_generate(resolve(common)).files) std::cout << f << "\n";
        } else if (*train) {
            const auto out = harness::cmd_train(resolve(common), topts);
            for (const auto& m : out.models)
                std::cout << m.checkpoint << " epoch=" << m.manifest.epoch << " valid_rel_l2=" << m.manifest.valid_rel_l2
                          << "\n";
        } else if (*eval) {
            for (const auto& r : harness::cmd_eval(resolve(common), eopts)) std::cout << harness::format_row(r) << "\n";
        } else if (*sweep) {
            const auto out = harness::cmd_sweep_lambda(resolve(common));
            for (const auto& d : out.degradation)
                std::cout << d.model << " " << d.variable << " degradation=" << d.ratio << "\n";
        } else if (*inspect) {
            if (const_opt->count() > 0) iopts.constant = constant;
            return harness::cmd_inspect(iopts, std::cout);
        }
    } catch (const Error& e) {
        fail(to_string(e.kind()), exit_code(e.kind()), e.what());
    } catch (const std::filesystem::filesystem_error& e) {
        fail("io", 4, e.what());
    } catch (const std::exception& e) {
        fail("internal", 1, e.what());
    }
    return 0;
}
