// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero if any fails. Pass criterion numbers as arguments to run a subset.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <set>
#include <sstream>
#include <string>

#include "aerodiff/checkpoint.hpp"
#include "aerodiff/config.hpp"
#include "aerodiff/evaluation.hpp"
#include "aerodiff/sample_io.hpp"
#include "aerodiff/synthetic.hpp"
#include "aerodiff/training.hpp"
#include "commands.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "temp_dir.hpp"

using namespace aerodiff;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* pattern, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, pattern, args...);
    return buf;
}

constexpr LatentKind kKinds[] = {LatentKind::Dit, LatentKind::Uvit, LatentKind::UnetMid, LatentKind::SkiplessDit};

// The default DIT layout scaled down to a 16x16 grid so 5000 iterations fit
// on one CPU core.
DenoiserConfig toy_model() {
    DenoiserConfig c;
    c.image_size = 16;
    c.base_width = 16;
    c.depth = 2;
    c.attn_levels = {};
    c.latent_kind = LatentKind::Dit;
    c.latent_blocks = 2;
    c.latent_heads = 4;
    c.embed_dim = 64;
    c.time_embed_dim = 32;
    c.norm_groups = 4;
    return c;
}

Dataset toy_dataset() {
    SynthDatasetSpec spec;
    spec.size = 16;
    spec.replicates = 20;
    spec.cases = reference_case_layout(8);
    return make_synthetic_dataset(spec);
}

Outcome forward_process() {
    double worst = 0.0;
    RandomStream rng(1);
    const Tensor x0 = Tensor::randn({2, 2, 2}, rng) * 2.0;
    const auto short_schedule = make_linear_schedule(5, 0.05, 0.4);
    const auto long_schedule = make_linear_schedule(1000, 1e-4, 0.02);
    std::size_t tested = 0;
    for (Timestep t = 1; t <= 5; ++t, ++tested) {
        const auto m = oracle::q_sample_moments(x0, t, short_schedule, 10000, 10 + t);
        worst = std::max({worst, m.worst_mean_z, m.worst_var_z});
    }
    for (Timestep t : {1, 10, 100, 250, 500, 750, 999, 1000}) {
        const auto m = oracle::q_sample_moments(x0, t, long_schedule, 10000, 100 + t);
        worst = std::max({worst, m.worst_mean_z, m.worst_var_z});
        ++tested;
    }
    return {worst <= 4.0, fmt("%zu timesteps, worst deviation %.2f SE", tested, worst)};
}

Outcome ddim_ddpm() {
    const auto r = oracle::ddim_ddpm_equivalence(100, 2);
    const bool ok = r.configs == 100 && r.worst_mean_rel <= 1e-6 && r.worst_sigma_rel <= 1e-6;
    return {ok, fmt("%zu configs, worst mean rel %.2e, worst sigma rel %.2e", r.configs, r.worst_mean_rel,
                    r.worst_sigma_rel)};
}

Outcome determinism() {
    Denoiser model(gradcheck::tiny_config(LatentKind::Dit), 3);
    RandomStream init(4);
    model.perturb_parameters(init, 0.05);
    const auto s = make_linear_schedule(100, 1e-4, 0.02);
    Tensor cond({3, 8, 8}, 0.0);
    for (std::size_t i = 0; i < cond.size(); ++i) cond[i] = init.uniform() - 0.5;
    const Tensor x_T = Tensor::randn({3, 8, 8}, init);
    bool ok = true;
    std::string detail;
    for (const SamplerPlan& plan : {SamplerPlan::ddim(100, 1), SamplerPlan::ddim(100, 10)}) {
        RandomStream a(5), b(99);
        const Tensor first = generate_from(model, cond, x_T, plan, s, a);
        const Tensor second = generate_from(model, cond, x_T, plan, s, b);
        const bool same = first == second && first.all_finite();
        ok = ok && same;
        detail += fmt("%s%zu steps %s", detail.empty() ? "" : ", ", plan.timesteps.size(),
                      same ? "identical" : "DIFFER");
    }
    return {ok, detail};
}

Outcome strided_law() {
    RandomStream rng(6);
    std::size_t bad = 0;
    for (int k = 0; k < 2000; ++k) {
        const int T = static_cast<int>(rng.uniform_int(1, 2000));
        const int n = static_cast<int>(rng.uniform_int(1, T));
        const auto steps = strided_subset(T, n);
        bool good = !steps.empty() && steps.front() == 1 && steps.back() <= T && steps.back() + n > T;
        for (std::size_t i = 1; good && i < steps.size(); ++i) good = steps[i] - steps[i - 1] == n;
        bad += !good;
    }
    const std::size_t ten = strided_subset(1000, 100).size();
    return {bad == 0 && ten == 10, fmt("2000 random (T, n), %zu violations; T=1000 n=100 gives %zu steps", bad, ten)};
}

Outcome gradient_check() {
    bool ok = true;
    std::string detail;
    std::uint64_t seed = 7;
    for (LatentKind kind : kKinds) {
        const auto r = gradcheck::backbone_gradcheck(kind, 200, seed++);
        ok = ok && r.checked == 200 && r.pass_fraction() >= 0.99;
        detail += fmt("%s%s %.1f%%", detail.empty() ? "" : ", ", to_string(kind).c_str(), 100.0 * r.pass_fraction());
    }
    return {ok, detail};
}

Outcome identity_at_init() {
    RandomStream rng(8);
    bool ok = true;
    double worst = 0.0;
    for (LatentKind kind : kKinds) {
        DenoiserConfig c;
        c.latent_kind = kind;
        const Denoiser model(c, 9);
        const std::size_t side = c.image_size >> c.depth;
        const std::vector<Timestep> ts{1, 1000};
        Tensor cond({2, 3, c.image_size, c.image_size}, 0.0);
        for (std::size_t i = 0; i < cond.size(); ++i) cond[i] = rng.uniform() - 0.5;
        {
            nn::NoGradGuard guard;
            const nn::Var z(Tensor::randn({2, c.latent_channels(), side, side}, rng));
            const nn::Var out =
                model.latent_transform(z, model.condition_embedding(nn::Var(cond)), model.time_embedding(ts));
            ok = ok && out.value() == z.value();
        }
        const Tensor eps = model.predict(Tensor::randn({2, 3, c.image_size, c.image_size}, rng), cond, ts);
        ok = ok && eps.all_finite();
        worst = std::max(worst, max_abs(eps));
    }
    return {ok && worst < 1.0, fmt("latent identity for 4 variants, max |eps| %.3g", worst)};
}

Outcome toy_end_to_end() {
    const auto started = std::chrono::steady_clock::now();
    const Dataset d = toy_dataset();
    const auto s = make_linear_schedule(1000, 1e-4, 0.02);
    const SamplerPlan plan = SamplerPlan::ddim(1000, 20, SigmaRule::ddpm_equivalent());
    TempDir dir("acceptance_toy");
    EvalOptions eo;
    eo.ensemble_size = 20;

    Denoiser model(toy_model(), 1);
    const EvalReport before = evaluate(model, d, plan, s, eo);

    TrainConfig t;
    t.iterations = 5000;
    t.batch_size = 16;
    t.adam.learning_rate = 1e-3;
    t.seed = 1;
    TrainOptions to;
    to.out_dir = dir.path / "train";
    train(model, d, s, t, to);

    eo.dump_dir = dir.path / "fields";
    const EvalReport after = evaluate(model, d, plan, s, eo);
    const double ratio = before.overall().mse_mu / after.overall().mse_mu;

    // Pool fluid cells of every test case: predicted spread against the replicate spread.
    std::vector<double> predicted, reference;
    for (std::uint32_t id : d.split.ids(Subset::Test)) {
        const FieldSample sd = read_sample(eo.dump_dir / fmt("case%03u_sd.bin", id));
        const CaseStatistics ref = d.statistics(id);
        const Tensor mask = sd.mask();
        const std::size_t plane = mask.size();
        for (std::size_t i = 0; i < ref.sd.size(); ++i) {
            if (mask[i % plane] >= 0.5) continue;
            predicted.push_back(sd.target[i]);
            reference.push_back(ref.sd[i]);
        }
    }
    const double rho = rank_correlation(predicted, reference);
    const double minutes =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count() / 60.0;
    return {ratio >= 10.0 && rho > 0.5,
            fmt("MSE_mu %.3e -> %.3e (%.1fx), sigma rank correlation %.3f over %zu cells, %.1f min",
                before.overall().mse_mu, after.overall().mse_mu, ratio, rho, predicted.size(), minutes)};
}

Outcome ablation_harness() {
    RunConfig c;
    c.model = toy_model();
    c.training.iterations = 20;
    c.training.batch_size = 4;
    c.evaluation.ensemble_size = 2;
    c.evaluation.cases = {0};
    c.validate();
    const Dataset d = toy_dataset();
    TempDir dir("acceptance_ablate");
    const cli::AblationResult r = cli::run_ablation(c, d, dir.path, nullptr);

    const std::vector<std::string> names = {"dit", "unet_mid", "skipless_dit", "ddpm_full"};
    bool ok = r.rows.size() == names.size();
    for (std::size_t i = 0; ok && i < names.size(); ++i) {
        const auto& row = r.rows[i];
        ok = row.variant == names[i] && std::isfinite(row.mse_mu) && std::isfinite(row.mse_sigma) &&
             row.seconds_per_sample > 0.0 &&
             (i == 0 ? std::isnan(row.rel_mu) : std::isfinite(row.rel_mu) && std::isfinite(row.rel_time));
    }
    const auto raw_csv = read_file_bytes(dir.path / "ablation.csv");
    const std::string csv(raw_csv.begin(), raw_csv.end());
    ok = ok && csv.rfind("variant,mse_mu,rel_change_mu,mse_sigma,rel_change_sigma,inference_seconds,rel_change_time,"
                         "model_calls_per_sample\n",
                         0) == 0;
    if (!ok || r.rows.size() != 4) return {false, "table schema mismatch:\n" + csv};
    const std::size_t fast = r.rows[0].model_calls_per_sample, full = r.rows[3].model_calls_per_sample;
    const bool factor = fast * static_cast<std::size_t>(c.sampler.stride) == full;
    return {factor, fmt("4 variants; %zu vs %zu model calls per sample (stride %d), time ratio %.1fx", fast, full,
                        c.sampler.stride, r.rows[3].seconds_per_sample / r.rows[0].seconds_per_sample)};
}

Outcome metric_oracle() {
    RandomStream rng(10);
    double worst = 0.0;
    for (int k = 0; k < 100; ++k) {
        const std::size_t h = rng.uniform_int(1, 12), w = rng.uniform_int(1, 12);
        const Tensor a = Tensor::randn({3, h, w}, rng), b = Tensor::randn({3, h, w}, rng);
        Tensor mask({h, w}, 0.0);
        for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = rng.uniform() < 0.2 ? 1.0 : 0.0;
        worst = std::max(worst, std::abs(mse_fields(a, b, mask) - oracle::brute_force_masked_mse(a, b, mask)));
        const Tensor none({h, w}, 0.0);
        worst = std::max(worst, std::abs(mse_fields(a, b) - oracle::brute_force_masked_mse(a, b, none)));
    }

    std::vector<CaseResult> cases;
    for (std::uint32_t id = 0; id < 9; ++id) {
        CaseResult c;
        c.case_id = id;
        c.region = id % 3 == 0 ? Region::Extrapolation : Region::Interpolation;
        c.category = id % 2 == 0 ? Category::Low : Category::High;
        c.mse_mu = rng.uniform();
        c.mse_sigma = rng.uniform();
        cases.push_back(c);
    }
    double worst_agg = 0.0;
    for (const auto& row : aggregate(cases)) {
        double mu = 0.0, sigma = 0.0;
        std::size_t n = 0;
        for (const auto& c : cases) {
            if ((row.region && *row.region != c.region) || (row.category && *row.category != c.category)) continue;
            mu += c.mse_mu;
            sigma += c.mse_sigma;
            ++n;
        }
        if (n != row.cases) return {false, "aggregate row " + row.label() + " has the wrong member count"};
        worst_agg = std::max({worst_agg, std::abs(row.mse_mu - mu / n), std::abs(row.mse_sigma - sigma / n)});
    }
    return {worst <= 1e-12 && worst_agg <= 1e-9,
            fmt("100 pairs, worst |diff| %.1e; aggregates worst |diff| %.1e", worst, worst_agg)};
}

Outcome round_trips() {
    const Dataset d = toy_dataset();
    const FieldSample& s = d.samples.front();
    const auto bytes = serialize_sample(s);
    const bool sample_ok = serialize_sample(deserialize_sample(bytes, "memory")) == bytes;

    const double speed = 97.5, p_inf = 101325.0;
    const Tensor mask = synthetic_mask(16, 16);
    const RawFields raw = denormalize_case(s.target, speed, p_inf);
    const Tensor again = normalize_raw_case(raw.pressure, raw.u_x, raw.u_y, speed, p_inf, mask);
    double norm_err = 0.0;
    for (std::size_t i = 0; i < again.size(); ++i) norm_err = std::max(norm_err, std::abs(again[i] - s.target[i]));

    TempDir dir("acceptance_ckpt");
    bool ckpt_ok = true;
    RandomStream rng(11);
    for (LatentKind kind : kKinds) {
        Denoiser model(gradcheck::tiny_config(kind), 12);
        model.perturb_parameters(rng, 0.05);
        const fs::path path = dir.path / (to_string(kind) + ".ckpt");
        save_checkpoint(path, model);
        const LoadedModel loaded = load_checkpoint(path);
        const Tensor x = Tensor::randn({2, 3, 8, 8}, rng), cond = Tensor::randn({2, 3, 8, 8}, rng);
        const std::vector<Timestep> ts{4, 600};
        ckpt_ok = ckpt_ok && model.predict(x, cond, ts) == loaded.model.predict(x, cond, ts);
    }
    return {sample_ok && norm_err <= 1e-6 && ckpt_ok,
            fmt("sample bytes %s, normalization worst %.1e, checkpoints %s", sample_ok ? "identical" : "DIFFER",
                norm_err, ckpt_ok ? "bit-exact" : "DIFFER")};
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"forward-process moments", forward_process},
        {"DDIM/DDPM single-step equivalence", ddim_ddpm},
        {"deterministic sampling", determinism},
        {"strided timestep subset", strided_law},
        {"backbone gradient check", gradient_check},
        {"identity at initialization", identity_at_init},
        {"toy end-to-end training", toy_end_to_end},
        {"ablation harness", ablation_harness},
        {"metric oracle", metric_oracle},
        {"round trips", round_trips},
    };
    std::set<int> wanted;
    for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));

    int failed = 0;
    for (std::size_t k = 0; k < criteria.size(); ++k) {
        const int id = static_cast<int>(k) + 1;
        if (!wanted.empty() && !wanted.count(id)) continue;
        Outcome o;
        try {
            o = criteria[k].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += !o.pass;
        std::printf("criterion %2d %s: %s (%s)\n", id, o.pass ? "PASS" : "FAIL", criteria[k].first.c_str(),
                    o.detail.c_str());
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
