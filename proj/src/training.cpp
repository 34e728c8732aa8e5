#include "aerodiff/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>

#include "aerodiff/checkpoint.hpp"
#include "aerodiff/error.hpp"
#include "aerodiff/forward_process.hpp"
#include "aerodiff/nn/layers.hpp"
#include "aerodiff/nn/ops.hpp"
#include "aerodiff/random.hpp"

namespace aerodiff {

namespace fs = std::filesystem;

Adam::Adam(AdamConfig config, const nn::ParameterList& params) : config_(config) {
    for (const auto& p : params) {
        m_.emplace_back(p.var.shape());
        v_.emplace_back(p.var.shape());
    }
}

void Adam::step(const nn::ParameterList& params) {
    require(params.size() == m_.size(), ErrorKind::Config, "optimizer was built for a different parameter list");
    for (const auto& p : params)
        require(p.var.grad().all_finite(), ErrorKind::Numerical, "non-finite gradient for '" + p.name + "'; update skipped");
    ++steps_;
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
    const double lr = config_.learning_rate;
    for (std::size_t k = 0; k < params.size(); ++k) {
        nn::Var v = params[k].var;
        const Tensor& g = v.grad();
        if (g.empty()) continue;
        Tensor& w = v.value_mut();
        Tensor &m = m_[k], &s = v_[k];
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            s[i] = b2 * s[i] + (1.0 - b2) * g[i] * g[i];
            w[i] -= lr * (m[i] / c1) / (std::sqrt(s[i] / c2) + config_.epsilon);
        }
        nn::round_to_float(w);
        nn::round_to_float(m);
        nn::round_to_float(s);
    }
}

std::map<std::string, Tensor> Adam::state(const nn::ParameterList& params) const {
    std::map<std::string, Tensor> out;
    for (std::size_t k = 0; k < params.size(); ++k) {
        out.emplace("optim.m." + params[k].name, m_[k]);
        out.emplace("optim.v." + params[k].name, v_[k]);
    }
    return out;
}

void Adam::restore(const std::map<std::string, Tensor>& arrays, const nn::ParameterList& params, std::size_t steps) {
    for (std::size_t k = 0; k < params.size(); ++k) {
        for (auto [prefix, dst] : {std::pair{"optim.m.", &m_[k]}, {"optim.v.", &v_[k]}}) {
            const auto it = arrays.find(prefix + params[k].name);
            require(it != arrays.end() && it->second.shape() == dst->shape(), ErrorKind::Config,
                    "resume state lacks a matching '" + std::string(prefix) + params[k].name + "'");
            *dst = it->second;
        }
    }
    steps_ = steps;
}

Ema::Ema(double decay, const nn::ParameterList& params) : decay_(decay) {
    for (const auto& p : params) shadow_.push_back(p.var.value());
}

void Ema::update(const nn::ParameterList& params) {
    for (std::size_t k = 0; k < params.size(); ++k) {
        const Tensor& w = params[k].var.value();
        for (std::size_t i = 0; i < w.size(); ++i) shadow_[k][i] = decay_ * shadow_[k][i] + (1.0 - decay_) * w[i];
    }
}

std::map<std::string, Tensor> Ema::arrays(const nn::ParameterList& params) const {
    std::map<std::string, Tensor> out;
    for (std::size_t k = 0; k < params.size(); ++k) out.emplace("ema." + params[k].name, shadow_[k]);
    return out;
}

void Ema::restore(const std::map<std::string, Tensor>& arrays, const nn::ParameterList& params) {
    for (std::size_t k = 0; k < params.size(); ++k)
        if (const auto it = arrays.find("ema." + params[k].name); it != arrays.end()) shadow_[k] = it->second;
}

void TrainConfig::validate() const {
    require(iterations >= 1, ErrorKind::Config, "training.iterations must be >= 1");
    require(batch_size >= 1, ErrorKind::Config, "training.batch_size must be >= 1");
    require(std::isfinite(adam.learning_rate) && adam.learning_rate > 0.0, ErrorKind::Config,
            "training.learning_rate must be > 0");
    require(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0, ErrorKind::Config,
            "Adam betas must lie in [0, 1)");
    require(!ema || (ema_decay > 0.0 && ema_decay < 1.0), ErrorKind::Config, "training.ema_decay must lie in (0, 1)");
}

TrainBatch make_batch(std::span<const FieldSample* const> samples) {
    require(!samples.empty(), ErrorKind::Data, "training batch is empty");
    const Shape& shape = samples.front()->target.shape();
    TrainBatch b{Tensor({samples.size(), shape[0], shape[1], shape[2]}),
                 Tensor({samples.size(), shape[0], shape[1], shape[2]})};
    const std::size_t row = shape_size(shape);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        require(samples[i]->target.shape() == shape, ErrorKind::Data, "batch samples have different grid sizes");
        std::copy(samples[i]->target.data(), samples[i]->target.data() + row, b.x0.data() + i * row);
        std::copy(samples[i]->condition.data(), samples[i]->condition.data() + row, b.condition.data() + i * row);
    }
    return b;
}

namespace {

std::vector<Timestep> draw_timesteps(std::size_t batch, const NoiseSchedule& schedule, RandomStream& rng) {
    std::vector<Timestep> ts(batch);
    for (auto& t : ts) t = static_cast<Timestep>(rng.uniform_int(1, schedule.num_steps()));
    return ts;
}

std::vector<double> row_losses(const Tensor& prediction, const Tensor& target) {
    const std::size_t rows = target.dim(0), row = target.size() / rows;
    std::vector<double> out(rows);
    for (std::size_t b = 0; b < rows; ++b) {
        double s = 0.0;
        for (std::size_t i = b * row; i < (b + 1) * row; ++i) s += (prediction[i] - target[i]) * (prediction[i] - target[i]);
        out[b] = s / row;
    }
    return out;
}

[[noreturn]] void non_finite_loss(const std::vector<Timestep>& ts, const Tensor& prediction, const Tensor& target) {
    std::ostringstream msg;
    msg << "non-finite training loss; snapshot:";
    const auto losses = row_losses(prediction, target);
    for (std::size_t b = 0; b < ts.size(); ++b) msg << "\n  row " << b << ": t=" << ts[b] << " loss=" << losses[b];
    fail(ErrorKind::Numerical, msg.str());
}

}  // namespace

StepResult noise_prediction_loss(const NoisePredictor& model, const TrainBatch& batch, const NoiseSchedule& schedule,
                                 RandomStream& rng) {
    StepResult r;
    r.timesteps = draw_timesteps(batch.x0.dim(0), schedule, rng);
    const NoisedBatch noised = q_sample_batch(batch.x0, r.timesteps, schedule, rng.split(0));
    const Tensor eps_hat = model.predict(noised.x_t, batch.condition, r.timesteps);
    require_same_shape(eps_hat, noised.epsilon, "noise_prediction_loss");
    double s = 0.0;
    for (std::size_t i = 0; i < eps_hat.size(); ++i) s += (eps_hat[i] - noised.epsilon[i]) * (eps_hat[i] - noised.epsilon[i]);
    r.loss = s / static_cast<double>(eps_hat.size());
    if (!std::isfinite(r.loss)) non_finite_loss(r.timesteps, eps_hat, noised.epsilon);
    return r;
}

StepResult train_step(Denoiser& model, const TrainBatch& batch, const NoiseSchedule& schedule, RandomStream& rng,
                      Adam& optimizer) {
    StepResult r;
    r.timesteps = draw_timesteps(batch.x0.dim(0), schedule, rng);
    const NoisedBatch noised = q_sample_batch(batch.x0, r.timesteps, schedule, rng.split(0));
    const auto params = model.parameters();
    for (const auto& p : params) {
        nn::Var v = p.var;
        v.zero_grad();
    }
    const nn::Var prediction = model.forward(nn::Var(noised.x_t), nn::Var(batch.condition), r.timesteps);
    nn::Var loss = nn::mse_loss(prediction, noised.epsilon);
    r.loss = loss.value()[0];
    if (!std::isfinite(r.loss)) non_finite_loss(r.timesteps, prediction.value(), noised.epsilon);
    loss.backward();
    optimizer.step(params);
    return r;
}

TrainResult train(Denoiser& model, const Dataset& dataset, const NoiseSchedule& schedule, const TrainConfig& config,
                  const TrainOptions& options) {
    config.validate();
    const auto pool = dataset.samples_in(Subset::Training);
    require(!pool.empty(), ErrorKind::Data, "dataset has no training samples");
    const auto& mc = model.config();
    require(pool.front()->target.dim(1) == mc.image_size && pool.front()->target.dim(2) == mc.image_size,
            ErrorKind::Config,
            "model.image_size " + std::to_string(mc.image_size) + " does not match the dataset grid " +
                std::to_string(pool.front()->target.dim(1)) + "x" + std::to_string(pool.front()->target.dim(2)));

    const auto params = model.parameters();
    Adam optimizer(config.adam, params);
    std::optional<Ema> ema;
    if (config.ema) ema.emplace(config.ema_decay, params);
    std::size_t start = 0;
    if (options.resume_arrays) {
        optimizer.restore(*options.resume_arrays, params, options.resume_iteration);
        if (ema) ema->restore(*options.resume_arrays, params);
        start = options.resume_iteration;
    }

    std::ofstream log;
    if (!options.out_dir.empty()) {
        fs::create_directories(options.out_dir);
        const fs::path log_path = options.out_dir / "loss.csv";
        const bool append = start > 0 && fs::exists(log_path);
        log.open(log_path, append ? std::ios::app : std::ios::trunc);
        require(log.good(), ErrorKind::Io, "cannot write " + log_path.string());
        if (!append) log << "iteration,loss,wall_seconds\n";
        log << std::setprecision(10);
    }

    TrainResult result;
    auto save = [&](std::size_t iteration, const fs::path& path) {
        nlohmann::json meta{{"iteration", iteration},
                            {"schedule",
                             {{"num_steps", schedule.num_steps()},
                              {"beta_start", schedule.beta_start()},
                              {"beta_end", schedule.beta_end()}}},
                            {"seed", config.seed},
                            {"re_max", dataset.split.re_max}};
        auto arrays = optimizer.state(params);
        if (ema) arrays.merge(ema->arrays(params));
        save_checkpoint(path, model, meta, arrays);
    };

    const RandomStream root(config.seed);
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<const FieldSample*> picks(config.batch_size);
    for (std::size_t it = start + 1; it <= start + config.iterations; ++it) {
        RandomStream rng = root.split(it);
        for (auto& p : picks) p = pool[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(pool.size()) - 1))];
        StepResult step;
        try {
            step = train_step(model, make_batch(picks), schedule, rng, optimizer);
        } catch (const Error&) {
            // The failed step never reached the optimizer, so the state is that of iteration it - 1.
            if (!options.out_dir.empty()) save(it - 1, options.out_dir / ("checkpoint_" + std::to_string(it - 1) + ".ckpt"));
            throw;
        }
        if (ema) ema->update(params);
        const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.losses.push_back(step.loss);
        if (log.is_open()) log << it << ',' << step.loss << ',' << wall << '\n' << std::flush;
        if (options.on_step) options.on_step({it, step.loss, wall});
        if (!options.out_dir.empty() && config.checkpoint_every > 0 && it % config.checkpoint_every == 0)
            save(it, options.out_dir / ("checkpoint_" + std::to_string(it) + ".ckpt"));
    }
    result.iterations = config.iterations;
    result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!options.out_dir.empty()) {
        result.final_checkpoint = options.out_dir / "final.ckpt";
        save(start + config.iterations, result.final_checkpoint);
    }
    return result;
}

}  // namespace aerodiff
