#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "aerodiff/data.hpp"
#include "aerodiff/denoiser.hpp"
#include "aerodiff/schedule.hpp"

namespace aerodiff {

class RandomStream;

struct AdamConfig {
    double learning_rate = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

// Adam over a fixed parameter list. Updated parameters and moments are rounded
// back to float32 so they stay exactly representable in checkpoints.
class Adam {
public:
    Adam(AdamConfig config, const nn::ParameterList& params);

    void step(const nn::ParameterList& params);
    std::size_t steps() const noexcept { return steps_; }

    // Moments as "optim.m.<name>" / "optim.v.<name>" arrays for checkpointing.
    std::map<std::string, Tensor> state(const nn::ParameterList& params) const;
    void restore(const std::map<std::string, Tensor>& arrays, const nn::ParameterList& params, std::size_t steps);

private:
    AdamConfig config_;
    std::vector<Tensor> m_, v_;
    std::size_t steps_ = 0;
};

struct TrainConfig {
    std::size_t iterations = 2000;
    std::size_t batch_size = 32;
    AdamConfig adam;
    bool ema = false;
    double ema_decay = 0.999;
    std::uint64_t seed = 0;
    std::size_t checkpoint_every = 0;  // 0: only the final checkpoint

    void validate() const;
};

struct TrainBatch {
    Tensor x0;         // [B, 3, H, W] clean targets
    Tensor condition;  // [B, 3, H, W]
};
TrainBatch make_batch(std::span<const FieldSample* const> samples);

struct StepResult {
    double loss = 0.0;
    std::vector<Timestep> timesteps;
};

// Draws t ~ U{1..T} per row and the noise from rng, returns the mean squared
// error between the injected and predicted noise. No parameter update.
StepResult noise_prediction_loss(const NoisePredictor& model, const TrainBatch& batch, const NoiseSchedule& schedule,
                                 RandomStream& rng);

// One optimizer update on the same objective. A non-finite loss raises a
// numerical error listing the timesteps and per-row losses.
StepResult train_step(Denoiser& model, const TrainBatch& batch, const NoiseSchedule& schedule, RandomStream& rng,
                      Adam& optimizer);

// Exponential moving average of the parameters.
class Ema {
public:
    Ema(double decay, const nn::ParameterList& params);
    void update(const nn::ParameterList& params);
    std::map<std::string, Tensor> arrays(const nn::ParameterList& params) const;  // "ema.<name>"
    void restore(const std::map<std::string, Tensor>& arrays, const nn::ParameterList& params);

private:
    double decay_;
    std::vector<Tensor> shadow_;
};

struct TrainProgress {
    std::size_t iteration;
    double loss;
    double wall_seconds;
};

struct TrainOptions {
    std::filesystem::path out_dir;  // loss.csv and checkpoints; empty for none
    std::function<void(const TrainProgress&)> on_step;
    // Resume state from a previous checkpoint (extra arrays + meta "iteration").
    const std::map<std::string, Tensor>* resume_arrays = nullptr;
    std::size_t resume_iteration = 0;
};

struct TrainResult {
    std::vector<double> losses;  // one per iteration run
    std::size_t iterations = 0;
    double wall_seconds = 0.0;
    std::filesystem::path final_checkpoint;
};

// Trains on the dataset's training subset. Writes out_dir/loss.csv with header
// iteration,loss,wall_seconds and checkpoints out_dir/checkpoint_<iter>.ckpt
// plus out_dir/final.ckpt. Dataset and config errors surface before step 1.
TrainResult train(Denoiser& model, const Dataset& dataset, const NoiseSchedule& schedule, const TrainConfig& config,
                  const TrainOptions& options = {});

}  // namespace aerodiff
