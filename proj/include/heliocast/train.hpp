#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "heliocast/geodata.hpp"
#include "heliocast/model.hpp"
#include "heliocast/tensor.hpp"

namespace heliocast::train {

// Default quantile list: 11 levels spanning the 96% interval.
std::vector<double> default_quantiles();

// max(alpha*(yhat - y), (1 - alpha)*(y - yhat)), averaged over timesteps.
// Equals the textbook pinball loss at level (1 - alpha).
double quantile_loss(std::span<const double> y, std::span<const double> yhat, double alpha);

// Sum over quantile levels of the per-level loss; fan is [T x Q] row-major.
double mql_loss(std::span<const double> y, const std::vector<double>& fan,
                const std::vector<double>& levels);

struct TrainConfig {
    double lr_peak = 0.0016;
    int warmup_epochs = 5;
    double weight_decay = 0.05;
    int batch_size = 8;
    int max_epochs = 20;
    int patience = 5;
    std::uint64_t seed = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double clip_norm = 1.0;
    bool strict_deterministic = false;

    void validate() const;
};

// Per-parameter first/second moment state for decoupled weight decay Adam.
struct AdamState {
    std::map<std::string, std::vector<double>> m;
    std::map<std::string, std::vector<double>> v;
    std::int64_t step = 0;
};

// One optimizer step from the gradients currently stored in `params`.
// Throws NumericError (and leaves weights untouched) on non-finite grads.
void optimizer_step(nnet::ParamStore& params, AdamState& state, const TrainConfig& cfg, double lr);

// Global gradient-norm clipping; returns the pre-clip norm.
double clip_gradients(nnet::ParamStore& params, double max_norm);

// Linear 0 -> lr_peak over [0, warmup_steps], then cosine decay to 0 at
// max_steps.
double lr_schedule(std::int64_t step, std::int64_t warmup_steps, std::int64_t max_steps,
                   double lr_peak);

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double lr = 0.0;
};

struct TrainResult {
    std::vector<EpochRecord> history;
    int best_epoch = -1;
    double best_val = 0.0;
    int epochs_run = 0;
    // Weights at the best validation epoch seen during this call; the model
    // itself is left at the last-epoch state so training can resume exactly.
    std::map<std::string, std::vector<double>> best_weights;
};

// Loop bookkeeping that must survive a checkpoint/resume cycle.
struct TrainLoopState {
    int next_epoch = 0;
    double best_val = std::numeric_limits<double>::infinity();
    int best_epoch = -1;
    int since_best = 0;
};

struct TrainDataset {
    std::vector<geodata::Sample> train;
    std::vector<geodata::Sample> val;
    geodata::NormStats stats;
    bool zero_context = false;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Trains in place. Exactly reproducible given the seed; per-epoch rng
// streams are derived from (seed, epoch, batch), never carried, so resuming
// from a checkpointed (weights, optimizer, loop state) replays the identical
// trajectory.
TrainResult train_model(nnet::CrossViViT& model, const TrainDataset& data, const TrainConfig& cfg,
                        const EpochCallback& on_epoch = nullptr,
                        AdamState* state_io = nullptr, TrainLoopState* loop_io = nullptr);

// Training/eval loss of one batch of samples (no weight update).
double dataset_loss(const nnet::CrossViViT& model, const std::vector<geodata::Sample>& samples,
                    const geodata::NormStats& stats, bool zero_context, int batch_size);

// --- finite-difference gradient checking -----------------------------------

struct GradCheckReport {
    std::string op;
    double max_rel_err = 0.0;
    std::string worst_tensor;
    bool pass = false;
};

// Central finite differences at float64 against the analytic backward pass.
// `only` restricts to one op name; empty runs the whole registry.
std::vector<GradCheckReport> run_grad_checks(double tolerance = 1e-4,
                                             const std::string& only = "",
                                             bool inject_bug = false);

std::vector<std::string> grad_check_op_names();

}  // namespace heliocast::train
