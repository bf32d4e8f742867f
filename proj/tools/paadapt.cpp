// paadapt: dataset generation, two-phase training, evaluation, ablations and
// visualization. Exit codes: 0 ok, 2 usage, 3 I/O, 4 config, 5 numeric.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "pasam/harness/commands.hpp"

namespace {

enum Exit { kOk = 0, kUsage = 2, kIo = 3, kConfig = 4, kNumeric = 5 };

int fail(int code, const std::string& kind, const std::string& what) {
    std::string one_line = what;
    for (auto& c : one_line)
        if (c == '\n' || c == '\r') c = ' ';
    std::cerr << "error: " << kind << ": " << one_line << "\n";
    return code;
}

std::optional<std::uint64_t> env_seed() {
    const char* s = std::getenv("PAADAPT_SEED");
    if (!s || !*s) return std::nullopt;
    char* end = nullptr;
    errno = 0;
    const auto v = std::strtoull(s, &end, 10);
    if (errno || *end || *s == '-') throw pasam::UsageError(std::string("PAADAPT_SEED must be an unsigned integer, got '") + s + "'");
    return v;
}

}  // namespace

int main(int argc, char** argv) {
    using namespace pasam::harness;
    CLI::App app{"Prompt-adapter segmentation toolkit"};
    app.require_subcommand(1);

    GenDataOptions gen;
    std::optional<std::uint64_t> gen_seed;
    auto* c_gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
    c_gen->add_option("--n", gen.n, "Number of samples")->required();
    c_gen->add_option("--out", gen.out, "Output directory")->required();
    c_gen->add_option("--seed", gen_seed, "Seed (default: PAADAPT_SEED or 0)");
    c_gen->add_option("--resolution", gen.resolution, "Image side in pixels");

    TrainOptions tr;
    std::optional<std::uint64_t> tr_seed;
    auto* c_train = app.add_subcommand("train", "Train one phase");
    c_train->add_option("--phase", tr.phase, "baseline or adapter");
    c_train->add_option("--data", tr.data, "Dataset directory");
    c_train->add_option("--config", tr.config, "key=value config file");
    c_train->add_option("--set", tr.overrides, "key=value override (repeatable)");
    c_train->add_option("--out", tr.out, "Run directory")->required();
    c_train->add_option("--baseline", tr.baseline, "Baseline checkpoint (phase adapter)");
    c_train->add_option("--manifest", tr.manifest, "Replay the run described by a manifest");
    c_train->add_option("--seed", tr_seed, "Training seed");

    EvalOptions ev;
    auto* c_eval = app.add_subcommand("eval", "Evaluate mIoU/mBIoU");
    c_eval->add_option("--checkpoint", ev.checkpoint, "Checkpoint file");
    c_eval->add_option("--data", ev.data, "Dataset directory")->required();
    c_eval->add_option("--predictions", ev.predictions, "Score these masks instead of a model");
    c_eval->add_option("--split", ev.split, "train, val or all");
    c_eval->add_option("--out", ev.out, "Write the table as CSV");
    c_eval->add_option("--set", ev.overrides, "key=value override (repeatable)");

    AblateOptions ab;
    std::optional<std::uint64_t> ab_seed;
    auto* c_ablate = app.add_subcommand("ablate", "Train one adapter per axis value");
    c_ablate->add_option("--axis", ab.axis, "crm, nsample, connection or blocks")->required();
    c_ablate->add_option("--data", ab.data, "Dataset directory")->required();
    c_ablate->add_option("--config", ab.config, "key=value config file");
    c_ablate->add_option("--set", ab.overrides, "key=value override (repeatable)");
    c_ablate->add_option("--baseline", ab.baseline, "Baseline checkpoint (trained if absent)");
    c_ablate->add_option("--out", ab.out, "Output directory")->required();
    c_ablate->add_option("--seed", ab_seed, "Training seed");

    VisualizeOptions vis;
    auto* c_vis = app.add_subcommand("visualize", "Write the six diagnostic images for one sample");
    c_vis->add_option("--checkpoint", vis.checkpoint, "Adapter checkpoint")->required();
    c_vis->add_option("--sample", vis.sample, "Sample stem, e.g. data/val/000080")->required();
    c_vis->add_option("--out", vis.out, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail(kUsage, "usage", e.what());
    }

    try {
        const auto default_seed = env_seed();
        if (c_gen->parsed()) {
            gen.seed = gen_seed ? *gen_seed : default_seed.value_or(0);
            gen_data(gen, std::cout);
        } else if (c_train->parsed()) {
            // precedence: --seed, then a seed key in config/overrides/manifest, then PAADAPT_SEED
            tr.seed = tr_seed;
            tr.default_seed = default_seed;
            train_command(tr, std::cout);
        } else if (c_eval->parsed()) {
            eval_command(ev, std::cout);
        } else if (c_ablate->parsed()) {
            ab.seed = ab_seed;
            ab.default_seed = default_seed;
            ablate_command(ab, std::cout);
        } else if (c_vis->parsed()) {
            visualize_command(vis, std::cout);
        }
    } catch (const pasam::UsageError& e) {
        return fail(kUsage, e.kind(), e.what());
    } catch (const pasam::IoError& e) {
        return fail(kIo, e.kind(), e.what());
    } catch (const pasam::NumericError& e) {
        return fail(kNumeric, e.kind(), e.what());
    } catch (const pasam::Error& e) {
        return fail(kConfig, e.kind(), e.what());
    } catch (const std::filesystem::filesystem_error& e) {
        return fail(kIo, "io", e.what());
    }
    return kOk;
}
