#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "aerodiff/data.hpp"
#include "aerodiff/sampler.hpp"

namespace aerodiff {

class RandomStream;

// Mean squared difference over unmasked cells. Fields are [C, H, W]; mask is
// [H, W] (1 = body) or empty to use every cell.
double mse_fields(const Tensor& predicted, const Tensor& reference, const Tensor& mask = {});

struct EnsembleOptions {
    std::size_t members = 20;
    bool want_sigma = true;
    // Every member starts from the same x_T. With a deterministic plan the
    // ensemble then collapses to one field.
    bool shared_start = false;
    std::size_t max_batch = 0;  // members per generate call; 0 runs all at once
};

struct EnsemblePrediction {
    Tensor members;            // [E, 3, H, W], zero inside the body
    Tensor mean;               // [3, H, W]
    std::optional<Tensor> sd;  // population spread, present when E >= 2
    bool degenerate = false;   // all members identical
    std::size_t model_evaluations = 0;
    double wall_seconds = 0.0;
};

// Member e draws its starting noise from rng.split(e), so a member's field does
// not depend on the ensemble size. condition is [3, H, W].
EnsemblePrediction ensemble_predict(const NoisePredictor& model, const Tensor& condition, const SamplerPlan& plan,
                                    const NoiseSchedule& schedule, const EnsembleOptions& options,
                                    const RandomStream& rng);

struct CaseResult {
    std::uint32_t case_id = 0;
    double reynolds = 0.0;
    double alpha_deg = 0.0;
    Region region = Region::Interpolation;
    Category category = Category::Low;
    double mse_mu = 0.0;
    double mse_sigma = 0.0;
    std::size_t model_evaluations = 0;
    double wall_seconds = 0.0;
    bool degenerate = false;
};

// Unweighted mean over member cases, with the standard error across cases.
// region/category are empty on the pooled rows.
struct AggregateRow {
    std::optional<Region> region;
    std::optional<Category> category;
    std::size_t cases = 0;
    double mse_mu = 0.0, mse_mu_se = 0.0;
    double mse_sigma = 0.0, mse_sigma_se = 0.0;

    std::string label() const;
};

std::vector<AggregateRow> aggregate(const std::vector<CaseResult>& cases);

struct EvalReport {
    std::vector<CaseResult> cases;
    std::vector<AggregateRow> aggregates;
    std::size_t ensemble_size = 0;
    std::size_t steps_per_sample = 0;
    std::size_t model_evaluations = 0;
    double wall_seconds = 0.0;
    std::vector<std::string> notes;

    const AggregateRow& overall() const;
    double seconds_per_sample() const;
};

struct EvalOptions {
    std::size_t ensemble_size = 20;
    bool shared_start = false;
    std::size_t max_batch = 0;
    Subset subset = Subset::Test;
    std::vector<std::uint32_t> case_ids;  // empty: every case of the subset
    std::uint64_t seed = 0;
    std::filesystem::path dump_dir;       // per-case mean/sd fields in the sample format; empty for none
};

// Case k uses the stream RandomStream(seed).split(case id).
EvalReport evaluate(const NoisePredictor& model, const Dataset& dataset, const SamplerPlan& plan,
                    const NoiseSchedule& schedule, const EvalOptions& options);

// One row per case followed by the aggregate rows.
std::string report_csv(const EvalReport& report);
std::string report_table(const EvalReport& report);

struct AblationEntry {
    std::string variant;
    EvalReport report;
};

struct AblationRow {
    std::string variant;
    double mse_mu = 0.0, mse_sigma = 0.0, seconds_per_sample = 0.0;
    std::size_t model_calls_per_sample = 0;
    // Relative to the first row; NaN on the first row itself.
    double rel_mu = 0.0, rel_sigma = 0.0, rel_time = 0.0;
};

std::vector<AblationRow> ablation_table(const std::vector<AblationEntry>& entries);
std::string ablation_csv(const std::vector<AblationRow>& rows);
std::string ablation_text(const std::vector<AblationRow>& rows);

// Spearman correlation with average ranks for ties. 0 when either input is constant.
double rank_correlation(std::span<const double> x, std::span<const double> y);

}  // namespace aerodiff
