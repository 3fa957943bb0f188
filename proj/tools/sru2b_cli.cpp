// sru2b: generate synthetic logs, train, evaluate, run ablations and sweeps,
// export embeddings. Exit codes: 0 ok, 2 config/validation, 3 numeric,
// 4 artifact mismatch.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <spdlog/cfg/env.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "sru2b/sru2b.hpp"

namespace fs = std::filesystem;
using namespace sru2b;

namespace {

enum ExitCode { kOk = 0, kConfig = 2, kNumeric = 3, kMismatch = 4 };

struct CommonOptions {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
};

RunConfig load(const CommonOptions& o) {
    RunConfig rc = o.config.empty() ? run_config_from_json(nlohmann::json::object()) : load_run_config(o.config);
    if (o.seed) {
        rc.generate.seed = *o.seed;
        rc.train.seed = *o.seed;
    }
    if (!o.out.empty()) rc.paths.out_dir = o.out;
    return rc;
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw PreconditionError("cannot create output directory " + dir.string());
}

std::ofstream open_out(const fs::path& p) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw PreconditionError("cannot write " + p.string());
    return out;
}

Dataset load_dataset(const RunConfig& rc) {
    std::ifstream cat(rc.paths.catalog_path());
    if (!cat) throw PreconditionError("cannot read catalog " + rc.paths.catalog_path().string());
    std::ifstream ev(rc.paths.events_path());
    if (!ev) throw PreconditionError("cannot read events " + rc.paths.events_path().string());
    const auto catalog = parse_catalog(cat);
    const auto events = parse_events(ev);
    auto d = prepare_dataset(catalog, events, rc.sequence, rc.eval.test_fraction);
    spdlog::info("{} items, {} users, {} train / {} test examples", d.vocab.n_items(), d.vocab.n_users(),
                 d.train.size(), d.test.size());
    return d;
}

int cmd_generate(const CommonOptions& o) {
    const RunConfig rc = load(o);
    ensure_dir(rc.paths.out());
    const auto log = generate_log(rc.generate);
    {
        auto out = open_out(rc.paths.catalog_path());
        write_catalog(out, log.catalog.items);
    }
    {
        auto out = open_out(rc.paths.events_path());
        write_events(out, log.events);
    }
    {
        auto out = open_out(rc.paths.out() / "latents.jsonl");
        write_latents(out, log);
    }
    std::size_t clicks = 0;
    for (const auto& e : log.events) clicks += e.type == EventType::click;
    std::cout << "generated " << log.catalog.items.size() << " items, " << log.users.user_ids.size() << " users, "
              << log.events.size() << " events (" << log.events.size() - clicks << " impressions, " << clicks
              << " clicks) in " << rc.paths.out().string() << '\n';
    return kOk;
}

int cmd_train(const CommonOptions& o, const std::string& checkpoint, const std::string& resume,
              std::optional<std::uint64_t> max_steps) {
    const RunConfig rc = load(o);
    ensure_dir(rc.paths.out());
    const Dataset d = load_dataset(rc);
    const fs::path ckpt_path = checkpoint.empty() ? rc.paths.checkpoint_path() : fs::path(checkpoint);

    Model m = make_model(rc.model, d.vocab, rc.train.seed);
    const fs::path trace_path = rc.paths.out() / "loss_trace.csv";
    if (rc.train.epochs == 0) {
        save_checkpoint(make_checkpoint(m, rc.train), ckpt_path);
        auto trace = open_out(trace_path);
        trace << "epoch,mean_loss\n";
        std::cout << "epochs=0: wrote initial checkpoint " << ckpt_path.string() << '\n';
        return kOk;
    }

    Trainer t(m, d.train, rc.train);
    bool appending = false;
    if (!resume.empty()) {
        const Checkpoint c = load_checkpoint(resume);
        check_compatible(c, rc.model, d.vocab);
        m.params = c.params;
        OptimizerState opt = t.optimizer();
        opt.accumulators = c.accumulators;
        t.restore(std::move(opt), c.global_step, c.partial_epoch_loss);
        appending = c.global_step > 0;
        spdlog::info("resumed from {} at step {}", resume, c.global_step);
    }

    std::ofstream trace(trace_path, std::ios::binary | (appending ? std::ios::app : std::ios::trunc));
    if (!trace) throw PreconditionError("cannot write " + trace_path.string());
    if (!appending) trace << "epoch,mean_loss\n";
    trace << std::setprecision(17);

    const std::uint64_t until = max_steps ? std::min(*max_steps, t.total_steps()) : t.total_steps();
    spdlog::info("training {} steps ({} per epoch)", until - t.global_step(), t.steps_per_epoch());
    t.run(until, [&](const EpochLoss& e) {
        trace << e.epoch << ',' << e.mean_loss << '\n';
        spdlog::info("epoch {} mean loss {:.6f}", e.epoch, e.mean_loss);
    });
    save_checkpoint(make_checkpoint(m, t), ckpt_path);
    std::cout << "trained to step " << t.global_step() << "; checkpoint " << ckpt_path.string() << ", trace "
              << trace_path.string() << '\n';
    return kOk;
}

// Loads a checkpoint and rebuilds the model against the configured data.
std::pair<Model, Checkpoint> load_model(const RunConfig& rc, const Dataset& d, const std::string& checkpoint) {
    const fs::path p = checkpoint.empty() ? rc.paths.checkpoint_path() : fs::path(checkpoint);
    Checkpoint c = load_checkpoint(p);
    check_compatible(c, rc.model, d.vocab);
    Model m = model_from_checkpoint(c, d.vocab);
    return {std::move(m), std::move(c)};
}

int cmd_evaluate(const CommonOptions& o, const std::string& checkpoint) {
    const RunConfig rc = load(o);
    ensure_dir(rc.paths.out());
    const Dataset d = load_dataset(rc);
    const auto [m, c] = load_model(rc, d, checkpoint);
    // The fusion mode the checkpoint was trained with decides how ẑ is formed.
    const MetricsReport rep = evaluate(m, d.test, rc.eval.cutoffs, c.train.loss);
    {
        auto out = open_out(rc.paths.out() / "metrics.csv");
        write_report_csv(out, rep);
    }
    {
        auto out = open_out(rc.paths.out() / "metrics.txt");
        write_report_text(out, rep);
    }
    write_report_text(std::cout, rep);
    return kOk;
}

auto progress_logger() {
    return [](const std::string& s) { spdlog::info("{}", s); };
}

int cmd_ablate(const CommonOptions& o, std::vector<std::string> variants) {
    const RunConfig rc = load(o);
    ensure_dir(rc.paths.out());
    const Dataset d = load_dataset(rc);
    if (variants.empty()) variants = rc.eval.variants;
    for (const auto& v : variants) variant_by_name(v);  // fail before any training
    const auto table = run_ablation(d, rc.model, rc.train, variants, rc.eval.cutoffs, progress_logger());
    {
        auto out = open_out(rc.paths.out() / "ablation.csv");
        write_ablation_csv(out, table);
    }
    {
        auto out = open_out(rc.paths.out() / "ablation.txt");
        write_ablation_text(out, table);
    }
    write_ablation_text(std::cout, table);
    return kOk;
}

int cmd_sweep(const CommonOptions& o) {
    const RunConfig rc = load(o);
    ensure_dir(rc.paths.out());
    const Dataset d = load_dataset(rc);
    const auto rows = run_sweep(d, rc.model, rc.train, rc.sweep, rc.eval.cutoffs, progress_logger());
    auto out = open_out(rc.paths.out() / "sweep.csv");
    write_sweep_csv(out, rows);
    write_sweep_csv(std::cout, rows);
    return kOk;
}

int cmd_export(const CommonOptions& o, const std::string& checkpoint, const std::string& output) {
    const RunConfig rc = load(o);
    const Dataset d = load_dataset(rc);
    const auto [m, c] = load_model(rc, d, checkpoint);
    fs::path path = output;
    if (path.empty()) {
        ensure_dir(rc.paths.out());
        path = rc.paths.out() / "embeddings.csv";
    }
    auto out = open_out(path);
    const std::size_t rows = write_embeddings_csv(out, m, d.split, d.test, c.train.loss.fusion_mode);
    std::cout << "wrote " << rows << " embedding rows to " << path.string() << '\n';
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    auto logger = spdlog::stderr_color_mt("sru2b");
    spdlog::set_default_logger(logger);
    spdlog::set_pattern("[%H:%M:%S] %^%l%$ %v");
    spdlog::set_level(spdlog::level::warn);
    spdlog::cfg::load_env_levels();  // SPDLOG_LEVEL=info|debug|...

    CLI::App app{"Sequential recommendation with unclicked-behavior modelling"};
    app.require_subcommand(1);

    CommonOptions common;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", common.config, "JSON run configuration");
        sub->add_option("--seed", common.seed, "Override generate.seed and train.seed");
        sub->add_option("--out", common.out, "Output directory (overrides paths.out_dir)");
    };

    auto* gen = app.add_subcommand("generate", "Write a synthetic catalog, event log and hidden latents");
    add_common(gen);

    std::string checkpoint, resume, output;
    std::optional<std::uint64_t> max_steps;
    auto* train = app.add_subcommand("train", "Train a model and write a checkpoint plus loss trace");
    add_common(train);
    train->add_option("--checkpoint", checkpoint, "Checkpoint to write (default <out>/model.ckpt)");
    train->add_option("--resume", resume, "Continue from this checkpoint");
    train->add_option("--max-steps", max_steps, "Stop once this many optimizer steps have been taken in total");

    auto* eval = app.add_subcommand("evaluate", "Top-k metrics of a checkpoint on the test split");
    add_common(eval);
    eval->add_option("--checkpoint", checkpoint, "Checkpoint to load (default <out>/model.ckpt)");

    std::vector<std::string> variants;
    auto* ablate = app.add_subcommand("ablate", "Train and compare the ablation variants");
    add_common(ablate);
    ablate->add_option("--variants", variants, "Variant names (default: config eval.variants, else all)");

    auto* sweep = app.add_subcommand("sweep", "Train the full model over sweep.lambdas and sweep.margins");
    add_common(sweep);

    auto* exp = app.add_subcommand("export-embeddings", "Write h, n, c, z per test example and every item vector");
    add_common(exp);
    exp->add_option("--checkpoint", checkpoint, "Checkpoint to load (default <out>/model.ckpt)");
    exp->add_option("--output", output, "CSV path (default <out>/embeddings.csv)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kConfig;
    }

    try {
        if (*gen) return cmd_generate(common);
        if (*train) return cmd_train(common, checkpoint, resume, max_steps);
        if (*eval) return cmd_evaluate(common, checkpoint);
        if (*ablate) return cmd_ablate(common, variants);
        if (*sweep) return cmd_sweep(common);
        if (*exp) return cmd_export(common, checkpoint, output);
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << '\n';
        return kNumeric;
    } catch (const MismatchError& e) {
        std::cerr << "artifact mismatch: " << e.what() << '\n';
        return kMismatch;
    } catch (const FormatError& e) {
        std::cerr << "artifact mismatch: " << e.what() << '\n';
        return kMismatch;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kConfig;
    }
    return kConfig;
}
