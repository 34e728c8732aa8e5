#include "aerodiff/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "aerodiff/error.hpp"
#include "aerodiff/random.hpp"
#include "aerodiff/sample_io.hpp"

namespace aerodiff {

namespace fs = std::filesystem;

double mse_fields(const Tensor& predicted, const Tensor& reference, const Tensor& mask) {
    require(predicted.shape() == reference.shape(), ErrorKind::Evaluation,
            "mse_fields: shapes " + shape_string(predicted.shape()) + " and " + shape_string(reference.shape()) +
                " differ");
    require(predicted.rank() == 3, ErrorKind::Evaluation, "mse_fields: fields must be [C, H, W]");
    const std::size_t plane = predicted.dim(1) * predicted.dim(2);
    if (!mask.empty())
        require(mask.size() == plane, ErrorKind::Evaluation,
                "mse_fields: mask " + shape_string(mask.shape()) + " does not cover the field grid");
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        if (!mask.empty() && mask[i % plane] >= 0.5) continue;
        const double d = predicted[i] - reference[i];
        total += d * d;
        ++count;
    }
    return count ? total / static_cast<double>(count) : 0.0;
}

namespace {

// Counts batch rows pushed through the wrapped model.
class CountingModel final : public NoisePredictor {
public:
    explicit CountingModel(const NoisePredictor& inner) : inner_(inner) {}
    Tensor predict(const Tensor& x_t, const Tensor& c, std::span<const Timestep> ts) const override {
        rows += ts.size();
        return inner_.predict(x_t, c, ts);
    }
    mutable std::size_t rows = 0;

private:
    const NoisePredictor& inner_;
};

}  // namespace

EnsemblePrediction ensemble_predict(const NoisePredictor& model, const Tensor& condition, const SamplerPlan& plan,
                                    const NoiseSchedule& schedule, const EnsembleOptions& options,
                                    const RandomStream& rng) {
    require(options.members >= 1, ErrorKind::Protocol, "ensemble size must be >= 1");
    require(!options.want_sigma || options.members >= 2, ErrorKind::Protocol,
            "an uncertainty field needs an ensemble of at least 2 members, got " + std::to_string(options.members));
    require(condition.rank() == 3 && condition.dim(0) == kConditionChannels, ErrorKind::Inference,
            "ensemble condition must be [3, H, W], got " + shape_string(condition.shape()));
    const std::size_t E = options.members, h = condition.dim(1), w = condition.dim(2), plane = h * w;
    const std::size_t field = kTargetChannels * plane;
    const std::size_t chunk = options.max_batch ? std::min(options.max_batch, E) : E;

    CountingModel counter(model);
    EnsemblePrediction out;
    out.members = Tensor({E, kTargetChannels, h, w});
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t first = 0; first < E; first += chunk) {
        const std::size_t n = std::min(chunk, E - first);
        Tensor cond({n, kConditionChannels, h, w}), start({n, kTargetChannels, h, w});
        for (std::size_t m = 0; m < n; ++m) {
            std::copy_n(condition.data(), field, cond.data() + m * field);
            RandomStream member = rng.split(options.shared_start ? 0 : first + m);
            member.fill_normal(std::span(start.data() + m * field, field));
        }
        RandomStream steps = rng.split(~std::uint64_t{0}).split(first);
        const Tensor x = generate_from(counter, cond, std::move(start), plan, schedule, steps);
        std::copy_n(x.data(), n * field, out.members.data() + first * field);
    }
    out.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.model_evaluations = counter.rows;
    require(out.members.all_finite(), ErrorKind::Numerical, "ensemble produced non-finite values");

    for (std::size_t m = 0; m < E; ++m)
        for (std::size_t i = 0; i < field; ++i)
            if (condition[i % plane] >= 0.5) out.members[m * field + i] = 0.0;

    std::vector<Tensor> members;
    for (std::size_t m = 0; m < E; ++m) members.push_back(out.members.slice_batch(m, 1).reshaped({kTargetChannels, h, w}));
    if (E == 1) {
        out.mean = members.front();
    } else {
        CaseStatistics s = compute_case_statistics(members);
        out.mean = std::move(s.mean);
        out.degenerate = max_abs(s.sd) == 0.0;
        out.sd = std::move(s.sd);
    }
    return out;
}

std::string AggregateRow::label() const {
    const std::string r = region ? to_string(*region) : "all";
    const std::string c = category ? to_string(*category) : "all";
    return r + "/" + c;
}

namespace {

std::pair<double, double> mean_and_se(const std::vector<double>& v) {
    const double n = static_cast<double>(v.size());
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
    if (v.size() < 2) return {mean, 0.0};
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return {mean, std::sqrt(ss / (n - 1.0)) / std::sqrt(n)};
}

}  // namespace

std::vector<AggregateRow> aggregate(const std::vector<CaseResult>& cases) {
    std::vector<AggregateRow> rows;
    auto add = [&](std::optional<Region> r, std::optional<Category> c) {
        std::vector<double> mu, sigma;
        for (const auto& k : cases)
            if ((!r || k.region == *r) && (!c || k.category == *c)) {
                mu.push_back(k.mse_mu);
                sigma.push_back(k.mse_sigma);
            }
        if (mu.empty()) return;
        AggregateRow row{r, c, mu.size()};
        std::tie(row.mse_mu, row.mse_mu_se) = mean_and_se(mu);
        std::tie(row.mse_sigma, row.mse_sigma_se) = mean_and_se(sigma);
        rows.push_back(row);
    };
    for (Region r : {Region::Interpolation, Region::Extrapolation}) {
        add(r, Category::Low);
        add(r, Category::High);
        add(r, std::nullopt);
    }
    add(std::nullopt, std::nullopt);
    return rows;
}

const AggregateRow& EvalReport::overall() const {
    require(!aggregates.empty() && !aggregates.back().region && !aggregates.back().category, ErrorKind::Evaluation,
            "report has no pooled row");
    return aggregates.back();
}

double EvalReport::seconds_per_sample() const {
    const std::size_t samples = cases.size() * ensemble_size;
    return samples ? wall_seconds / static_cast<double>(samples) : 0.0;
}

EvalReport evaluate(const NoisePredictor& model, const Dataset& dataset, const SamplerPlan& plan,
                    const NoiseSchedule& schedule, const EvalOptions& options) {
    plan.validate(schedule);
    require(options.ensemble_size >= 2, ErrorKind::Protocol,
            "evaluation compares uncertainty fields and needs ensemble_size >= 2, got " +
                std::to_string(options.ensemble_size));
    std::vector<std::uint32_t> ids = options.case_ids.empty() ? dataset.split.ids(options.subset) : options.case_ids;
    require(!ids.empty(), ErrorKind::Evaluation, "no cases to evaluate in the " + to_string(options.subset) + " subset");

    // Reference statistics for every case are checked before any sampling.
    std::vector<CaseStatistics> refs;
    for (std::uint32_t id : ids) {
        dataset.split.at(id);
        refs.push_back(dataset.statistics(id));
    }

    EvalReport report;
    report.ensemble_size = options.ensemble_size;
    report.steps_per_sample = plan.model_calls_per_sample();
    const RandomStream root(options.seed);
    std::size_t replicate_count = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
        const CaseInfo& info = dataset.split.at(ids[k]);
        const FieldSample& first = *dataset.samples_of(ids[k]).front();
        const Tensor mask = first.mask();
        EnsembleOptions eo;
        eo.members = options.ensemble_size;
        eo.shared_start = options.shared_start;
        eo.max_batch = options.max_batch;
        const EnsemblePrediction ens = ensemble_predict(model, first.condition, plan, schedule, eo, root.split(ids[k]));

        CaseResult r;
        r.case_id = ids[k];
        r.reynolds = info.reynolds;
        r.alpha_deg = first.meta.alpha_deg;
        r.region = info.region;
        r.category = info.category;
        r.mse_mu = mse_fields(ens.mean, refs[k].mean, mask);
        r.mse_sigma = mse_fields(*ens.sd, refs[k].sd, mask);
        r.model_evaluations = ens.model_evaluations;
        r.wall_seconds = ens.wall_seconds;
        r.degenerate = ens.degenerate;
        report.cases.push_back(r);
        report.model_evaluations += ens.model_evaluations;
        report.wall_seconds += ens.wall_seconds;
        replicate_count = refs[k].replicates;

        if (!options.dump_dir.empty()) {
            char name[64];
            for (auto [tag, field] : {std::pair{"mean", &ens.mean}, {"sd", &*ens.sd}}) {
                FieldSample s{first.condition, *field, first.meta};
                s.meta.replicate = 0;
                std::snprintf(name, sizeof name, "case%03u_%s.bin", ids[k], tag);
                write_sample(options.dump_dir / name, s);
            }
        }
    }
    report.aggregates = aggregate(report.cases);

    if (std::any_of(report.cases.begin(), report.cases.end(), [](const CaseResult& c) { return c.degenerate; }))
        report.notes.push_back("degenerate ensemble: all members identical for at least one case, so sigma-hat is 0");
    if (options.ensemble_size == replicate_count)
        report.notes.push_back("ensemble size " + std::to_string(options.ensemble_size) +
                               " matches the reference replicate count");
    else
        report.notes.push_back("ensemble size " + std::to_string(options.ensemble_size) + " differs from the " +
                               std::to_string(replicate_count) + " reference replicates");
    return report;
}

namespace {

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6e", v);
    return buf;
}

}  // namespace

std::string report_csv(const EvalReport& r) {
    std::ostringstream out;
    out << "row,case,reynolds,alpha_deg,region,category,cases,mse_mu,mse_mu_se,mse_sigma,mse_sigma_se,"
           "model_evaluations,wall_seconds\n";
    for (const auto& c : r.cases)
        out << "case," << c.case_id << ',' << format_double(c.reynolds) << ',' << format_double(c.alpha_deg) << ','
            << to_string(c.region) << ',' << to_string(c.category) << ",1," << num(c.mse_mu) << ",," << num(c.mse_sigma)
            << ",," << c.model_evaluations << ',' << c.wall_seconds << '\n';
    for (const auto& a : r.aggregates)
        out << "aggregate,,,," << (a.region ? to_string(*a.region) : "all") << ','
            << (a.category ? to_string(*a.category) : "all") << ',' << a.cases << ',' << num(a.mse_mu) << ','
            << num(a.mse_mu_se) << ',' << num(a.mse_sigma) << ',' << num(a.mse_sigma_se) << ",,\n";
    return out.str();
}

std::string report_table(const EvalReport& r) {
    std::ostringstream out;
    char line[256];
    std::snprintf(line, sizeof line, "%-14s %-9s %5s  %-26s %-26s\n", "region", "sigma_y", "cases", "MSE_mu (+- se)",
                  "MSE_sigma (+- se)");
    out << line;
    for (const auto& a : r.aggregates) {
        std::snprintf(line, sizeof line, "%-14s %-9s %5zu  %.4e +- %.2e   %.4e +- %.2e\n",
                      a.region ? to_string(*a.region).c_str() : "all",
                      a.category ? (to_string(*a.category) + " cases").c_str() : "all cases", a.cases, a.mse_mu,
                      a.mse_mu_se, a.mse_sigma, a.mse_sigma_se);
        out << line;
    }
    out << "\nensemble " << r.ensemble_size << " x " << r.steps_per_sample << " model calls per sample, "
        << r.model_evaluations << " evaluations, " << num(r.seconds_per_sample()) << " s per sample\n";
    for (const auto& n : r.notes) out << "note: " << n << '\n';
    return out.str();
}

std::vector<AblationRow> ablation_table(const std::vector<AblationEntry>& entries) {
    require(!entries.empty(), ErrorKind::Evaluation, "ablation table needs at least one variant");
    std::vector<AblationRow> rows;
    for (const auto& e : entries) {
        const AggregateRow& all = e.report.overall();
        rows.push_back({e.variant, all.mse_mu, all.mse_sigma, e.report.seconds_per_sample(), e.report.steps_per_sample});
    }
    const AblationRow base = rows.front();
    auto rel = [](double v, double b) { return b != 0.0 ? (v - b) / b : NAN; };
    for (std::size_t k = 0; k < rows.size(); ++k) {
        if (k == 0) {
            rows[k].rel_mu = rows[k].rel_sigma = rows[k].rel_time = NAN;
            continue;
        }
        rows[k].rel_mu = rel(rows[k].mse_mu, base.mse_mu);
        rows[k].rel_sigma = rel(rows[k].mse_sigma, base.mse_sigma);
        rows[k].rel_time = rel(rows[k].seconds_per_sample, base.seconds_per_sample);
    }
    return rows;
}

namespace {

std::string percent(double v) {
    if (std::isnan(v)) return "--";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%+.1f%%", 100.0 * v);
    return buf;
}

}  // namespace

std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::ostringstream out;
    out << "variant,mse_mu,rel_change_mu,mse_sigma,rel_change_sigma,inference_seconds,rel_change_time,"
           "model_calls_per_sample\n";
    for (const auto& r : rows)
        out << r.variant << ',' << num(r.mse_mu) << ',' << percent(r.rel_mu) << ',' << num(r.mse_sigma) << ','
            << percent(r.rel_sigma) << ',' << num(r.seconds_per_sample) << ',' << percent(r.rel_time) << ','
            << r.model_calls_per_sample << '\n';
    return out.str();
}

std::string ablation_text(const std::vector<AblationRow>& rows) {
    std::ostringstream out;
    char line[256];
    std::snprintf(line, sizeof line, "%-22s %12s %10s %12s %10s %14s %10s %6s\n", "variant", "MSE_mu", "rel", "MSE_sigma",
                  "rel", "time/sample(s)", "rel", "calls");
    out << line;
    for (const auto& r : rows) {
        std::snprintf(line, sizeof line, "%-22s %12.4e %10s %12.4e %10s %14.4e %10s %6zu\n", r.variant.c_str(),
                      r.mse_mu, percent(r.rel_mu).c_str(), r.mse_sigma, percent(r.rel_sigma).c_str(),
                      r.seconds_per_sample, percent(r.rel_time).c_str(), r.model_calls_per_sample);
        out << line;
    }
    return out.str();
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(v.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

}  // namespace

double rank_correlation(std::span<const double> x, std::span<const double> y) {
    require(x.size() == y.size() && !x.empty(), ErrorKind::Evaluation, "rank_correlation needs equal, non-empty inputs");
    const auto rx = average_ranks(x), ry = average_ranks(y);
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n, my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    return sxx > 0.0 && syy > 0.0 ? sxy / std::sqrt(sxx * syy) : 0.0;
}

}  // namespace aerodiff
