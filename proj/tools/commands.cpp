#include "commands.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <iostream>

#include <CLI11.hpp>

#include "aerodiff/checkpoint.hpp"
#include "aerodiff/importer.hpp"
#include "aerodiff/random.hpp"
#include "aerodiff/sample_io.hpp"
#include "aerodiff/synthetic.hpp"
#include "aerodiff/training.hpp"

namespace aerodiff::cli {

namespace fs = std::filesystem;
using nlohmann::json;

int exit_code(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Config:
        case ErrorKind::Schedule:
        case ErrorKind::Plan:
        case ErrorKind::Protocol:
            return 2;
        case ErrorKind::Numerical:
        case ErrorKind::Inference:
            return 4;
        default:
            return 3;
    }
}

namespace {

std::string timestamp() {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    localtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y%m%d-%H%M%S", &tm);
    return buf;
}

void note(std::ostream* log, const std::string& line) {
    if (log) *log << line << '\n' << std::flush;
}

}  // namespace

RunContext prepare_run(const std::string& command, const CommonArgs& args) {
    std::vector<std::string> overrides = args.overrides;
    if (args.seed) overrides.push_back("seed=" + std::to_string(*args.seed));
    LoadedConfig loaded = load_run_config(args.config, overrides);

    const std::string stem = command + "-" + config_hash(loaded.tree).substr(0, 8) + "-" + timestamp();
    fs::path dir = args.out / stem;
    for (int k = 2; fs::exists(dir); ++k) dir = args.out / (stem + "-" + std::to_string(k));
    fs::create_directories(dir);
    write_text_file(dir / "resolved_config.json", loaded.tree.dump(2) + "\n");
    note(args.log, "run directory " + dir.string());
    return {std::move(loaded.config), std::move(loaded.tree), dir};
}

fs::path resolve_data_root(const RunConfig& config) {
    if (!config.data_root.empty()) return config.data_root;
    if (const char* env = std::getenv(kDataRootEnv); env && *env) return env;
    fail(ErrorKind::Config, std::string("data.root is not set and ") + kDataRootEnv + " is empty");
}

namespace {

Dataset load_checked(const RunConfig& config, std::vector<std::string>& warnings) {
    Dataset d = load_dataset(resolve_data_root(config));
    warnings.insert(warnings.end(), d.warnings.begin(), d.warnings.end());
    require(!d.samples.empty(), ErrorKind::Data, "dataset " + resolve_data_root(config).string() + " has no samples");
    return d;
}

void check_schedule(const RunConfig& config, const json& meta, const fs::path& ckpt) {
    if (!meta.contains("schedule")) return;
    const json& s = meta["schedule"];
    const auto& c = config.schedule;
    require(s.value("num_steps", c.num_steps) == c.num_steps && s.value("beta_start", c.beta_start) == c.beta_start &&
                s.value("beta_end", c.beta_end) == c.beta_end,
            ErrorKind::Config, "schedule: config " + to_tree(config)["schedule"].dump() + " differs from " +
                                   ckpt.string() + " which was trained with " + s.dump());
}

LoadedModel load_model(const RunConfig& config) {
    require(!config.checkpoint.empty(), ErrorKind::Config, "checkpoint: no checkpoint path given");
    LoadedModel m = load_checkpoint(config.checkpoint);
    check_schedule(config, m.meta, config.checkpoint);
    return m;
}

TrainOptions train_options(const fs::path& dir, std::size_t iterations, std::ostream* log) {
    TrainOptions o;
    o.out_dir = dir;
    const std::size_t every = std::max<std::size_t>(1, iterations / 20);
    o.on_step = [log, every](const TrainProgress& p) {
        if (log && p.iteration % every == 0) {
            char line[128];
            std::snprintf(line, sizeof line, "iter %zu loss %.5f (%.1f s)", p.iteration, p.loss, p.wall_seconds);
            *log << line << '\n' << std::flush;
        }
    };
    return o;
}

void write_report(const fs::path& dir, const EvalReport& report) {
    write_text_file(dir / "report.csv", report_csv(report));
    write_text_file(dir / "report.txt", report_table(report));
}

}  // namespace

CommandResult cmd_import(const CommonArgs& args, const fs::path& archive) {
    RunContext run = prepare_run("import", args);
    ImportOptions options = run.config.import;
    Dataset d = import_archive(archive, options);
    save_dataset(run.dir / "dataset", d);
    CommandResult r{run.dir, d.warnings};
    for (const auto& w : d.warnings) note(args.log, "warning: " + w);
    note(args.log, "imported " + std::to_string(d.samples.size()) + " samples in " +
                       std::to_string(d.split.cases.size()) + " cases to " + (run.dir / "dataset").string());
    if (d.samples.empty()) r.status = 3;
    return r;
}

CommandResult cmd_synth(const CommonArgs& args) {
    RunContext run = prepare_run("synth", args);
    const Dataset d = make_synthetic_dataset(run.config.synthetic.spec(run.config.seed));
    save_dataset(run.dir / "dataset", d);
    note(args.log, "wrote " + std::to_string(d.samples.size()) + " synthetic samples to " +
                       (run.dir / "dataset").string());
    return {run.dir, {}};
}

CommandResult cmd_train(const CommonArgs& args, const fs::path& resume) {
    RunContext run = prepare_run("train", args);
    CommandResult result{run.dir, {}};
    const Dataset d = load_checked(run.config, result.warnings);
    const NoiseSchedule schedule = run.config.schedule.make();

    std::optional<LoadedModel> resumed;
    if (!resume.empty()) {
        resumed.emplace(load_checkpoint(resume));
        check_schedule(run.config, resumed->meta, resume);
        require(resumed->model.config() == run.config.model, ErrorKind::Config,
                "model: config differs from the architecture stored in " + resume.string());
    }
    Denoiser model = resumed ? std::move(resumed->model) : Denoiser(run.config.model, run.config.seed);
    note(args.log, std::to_string(model.parameter_count()) + " parameters, " + std::to_string(d.samples.size()) +
                       " samples");
    TrainOptions options = train_options(run.dir, run.config.training.iterations, args.log);
    if (resumed) {
        options.resume_arrays = &resumed->extra_arrays;
        options.resume_iteration = resumed->meta.value("iteration", std::size_t{0});
    }
    const TrainResult r = train(model, d, schedule, run.config.training, options);
    note(args.log, "final checkpoint " + r.final_checkpoint.string());
    return result;
}

CommandResult cmd_sample(const CommonArgs& args) {
    RunContext run = prepare_run("sample", args);
    const RunConfig& c = run.config;
    LoadedModel loaded = load_model(c);
    const std::size_t size = loaded.model.config().image_size;

    Tensor mask;
    if (!c.sample.mask.empty()) {
        mask = read_sample(c.sample.mask).mask();
        require(mask.dim(0) == size && mask.dim(1) == size, ErrorKind::Config,
                "sample.mask: grid of " + c.sample.mask + " does not match the model image size");
    } else {
        mask = synthetic_mask(size, size);
    }
    const double re_max = c.sample.re_max > 0.0 ? c.sample.re_max : loaded.meta.value("re_max", 0.0);
    require(re_max > 0.0, ErrorKind::Config, "sample.re_max: the checkpoint records no re_max; set it explicitly");
    const Tensor condition = encode_condition(mask, c.sample.reynolds, c.sample.alpha_deg, re_max);

    EnsembleOptions eo;
    eo.members = c.sample.count;
    eo.want_sigma = c.sample.count >= 2;
    eo.max_batch = c.evaluation.max_batch;
    const NoiseSchedule schedule = c.schedule.make();
    const EnsemblePrediction ens = ensemble_predict(loaded.model, condition, c.sampler.plan(c.schedule.num_steps),
                                                    schedule, eo, RandomStream(c.seed));

    const SampleMeta meta{c.sample.case_id, c.sample.reynolds, c.sample.alpha_deg, 0};
    char name[64];
    for (std::size_t k = 0; k < c.sample.count; ++k) {
        FieldSample s{condition, ens.members.slice_batch(k, 1).reshaped({3, size, size}), meta};
        s.meta.replicate = static_cast<std::uint32_t>(k);
        std::snprintf(name, sizeof name, "sample_%03zu.bin", k);
        write_sample(run.dir / "samples" / name, s);
    }
    write_sample(run.dir / "mean.bin", {condition, ens.mean, meta});
    if (ens.sd) write_sample(run.dir / "sd.bin", {condition, *ens.sd, meta});

    std::ostringstream summary;
    summary << "case " << c.sample.case_id << "\nreynolds " << format_double(c.sample.reynolds) << "\nalpha_deg "
            << format_double(c.sample.alpha_deg) << "\nre_max " << format_double(re_max) << "\nmembers "
            << c.sample.count << "\nmodel_evaluations " << ens.model_evaluations << "\nwall_seconds "
            << ens.wall_seconds << "\n";
    if (ens.degenerate) summary << "note degenerate ensemble\n";
    write_text_file(run.dir / "summary.txt", summary.str());
    note(args.log, "wrote " + std::to_string(c.sample.count) + " samples for Re " + format_double(c.sample.reynolds) +
                       ", alpha " + format_double(c.sample.alpha_deg));
    return {run.dir, {}};
}

CommandResult cmd_evaluate(const CommonArgs& args) {
    RunContext run = prepare_run("evaluate", args);
    CommandResult result{run.dir, {}};
    const Dataset d = load_checked(run.config, result.warnings);
    LoadedModel loaded = load_model(run.config);
    EvalOptions o = run.config.eval_options();
    if (run.config.evaluation.dump_fields) o.dump_dir = run.dir / "fields";
    const EvalReport report = evaluate(loaded.model, d, run.config.sampler.plan(run.config.schedule.num_steps),
                                       run.config.schedule.make(), o);
    write_report(run.dir, report);
    if (args.log) *args.log << report_table(report);
    return result;
}

AblationResult run_ablation(const RunConfig& config, const Dataset& dataset, const fs::path& dir, std::ostream* log) {
    const NoiseSchedule schedule = config.schedule.make();
    const SamplerPlan plan = config.sampler.plan(config.schedule.num_steps);
    const EvalOptions eval = config.eval_options();
    AblationResult out;
    std::optional<Denoiser> full;
    for (LatentKind kind : {LatentKind::Dit, LatentKind::UnetMid, LatentKind::SkiplessDit}) {
        const std::string name = to_string(kind);
        note(log, "training " + name);
        DenoiserConfig mc = config.model;
        mc.latent_kind = kind;
        Denoiser model(mc, config.seed);
        train(model, dataset, schedule, config.training,
              train_options(dir / name, config.training.iterations, log));
        const EvalReport report = evaluate(model, dataset, plan, schedule, eval);
        write_report(dir / name, report);
        out.entries.push_back({name, report});
        if (kind == LatentKind::Dit) full.emplace(std::move(model));
    }
    note(log, "evaluating dit with full-step DDPM sampling");
    const EvalReport ddpm = evaluate(*full, dataset, SamplerPlan::ddpm_full(config.schedule.num_steps), schedule, eval);
    fs::create_directories(dir / "ddpm_full");
    write_report(dir / "ddpm_full", ddpm);
    out.entries.push_back({"ddpm_full", ddpm});
    out.rows = ablation_table(out.entries);
    write_text_file(dir / "ablation.csv", ablation_csv(out.rows));
    write_text_file(dir / "ablation.txt", ablation_text(out.rows));
    return out;
}

CommandResult cmd_ablate(const CommonArgs& args) {
    RunContext run = prepare_run("ablate", args);
    CommandResult result{run.dir, {}};
    const Dataset d = load_checked(run.config, result.warnings);
    const AblationResult r = run_ablation(run.config, d, run.dir, args.log);
    if (args.log) *args.log << ablation_text(r.rows);
    return result;
}

int run_cli(int argc, char** argv) {
    CLI::App app{"aerodiff: diffusion surrogate for 2-D airfoil flow fields"};
    app.require_subcommand(1);
    CommonArgs common;
    common.log = &std::cerr;
    std::uint64_t seed = 0;
    std::string data, checkpoint;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", common.config, "JSON config file");
        sub->add_option("--set", common.overrides, "override path=value (repeatable)")->take_all();
        sub->add_option("--seed", seed, "run seed");
        sub->add_option("--out", common.out, "parent directory for run directories")->capture_default_str();
    };
    auto* imp = app.add_subcommand("import", "convert an upstream archive into the sample format");
    fs::path archive;
    imp->add_option("archive", archive, "archive directory")->required();
    auto* syn = app.add_subcommand("synth", "generate the synthetic potential-flow dataset");
    auto* trn = app.add_subcommand("train", "train a denoiser");
    fs::path resume;
    trn->add_option("--resume", resume, "checkpoint to resume from");
    auto* smp = app.add_subcommand("sample", "generate fields for one (Re, alpha) condition");
    auto* evl = app.add_subcommand("evaluate", "ensemble evaluation against reference statistics");
    auto* abl = app.add_subcommand("ablate", "train and compare the ablation variants");
    for (auto* sub : {imp, syn, trn, smp, evl, abl}) add_common(sub);
    for (auto* sub : {trn, evl, abl}) sub->add_option("--data", data, "dataset root (sets data.root)");
    for (auto* sub : {smp, evl}) sub->add_option("--checkpoint", checkpoint, "checkpoint file (sets checkpoint)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    for (auto* sub : app.get_subcommands())
        if (sub->count("--seed")) common.seed = seed;
    if (!data.empty()) common.overrides.push_back("data.root=" + data);
    if (!checkpoint.empty()) common.overrides.push_back("checkpoint=" + checkpoint);

    try {
        CommandResult r;
        if (imp->parsed()) r = cmd_import(common, archive);
        if (syn->parsed()) r = cmd_synth(common);
        if (trn->parsed()) r = cmd_train(common, resume);
        if (smp->parsed()) r = cmd_sample(common);
        if (evl->parsed()) r = cmd_evaluate(common);
        if (abl->parsed()) r = cmd_ablate(common);
        std::cout << r.run_dir.string() << '\n';
        return r.status;
    } catch (const Error& e) {
        std::cerr << "error [" << to_string(e.kind()) << "]: " << e.what() << '\n';
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    }
}

}  // namespace aerodiff::cli
