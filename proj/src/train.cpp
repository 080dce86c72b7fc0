#include "heliocast/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace heliocast::train {

using nnet::CrossViViT;
using nnet::ParamStore;
using nnet::SampleInput;
using nnet::Tensor;

std::vector<double> default_quantiles() {
    return {0.02, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.98};
}

double quantile_loss(std::span<const double> y, std::span<const double> yhat, double alpha) {
    if (alpha <= 0.0 || alpha >= 1.0)
        throw ParameterError("quantile_loss: alpha must lie in (0, 1)");
    if (y.size() != yhat.size()) throw ShapeError("quantile_loss: length mismatch");
    if (y.empty()) throw ShapeError("quantile_loss: empty input");
    double acc = 0.0;
    for (size_t i = 0; i < y.size(); ++i)
        acc += std::max(alpha * (yhat[i] - y[i]), (1.0 - alpha) * (y[i] - yhat[i]));
    return acc / static_cast<double>(y.size());
}

double mql_loss(std::span<const double> y, const std::vector<double>& fan,
                const std::vector<double>& levels) {
    const size_t T = y.size();
    const size_t Q = levels.size();
    if (fan.size() != T * Q) throw ShapeError("mql_loss: fan is not [T x Q]");
    double total = 0.0;
    std::vector<double> column(T);
    for (size_t q = 0; q < Q; ++q) {
        for (size_t t = 0; t < T; ++t) column[t] = fan[t * Q + q];
        total += quantile_loss(y, column, levels[q]);
    }
    return total;
}

void TrainConfig::validate() const {
    if (lr_peak <= 0.0) throw ConfigError("train: lr_peak must be positive");
    if (warmup_epochs < 0 || max_epochs <= 0)
        throw ConfigError("train: epoch counts must be positive");
    if (warmup_epochs >= max_epochs)
        throw ConfigError("train: warmup must end before max_epochs");
    if (batch_size <= 0) throw ConfigError("train: batch_size must be positive");
    if (patience <= 0) throw ConfigError("train: patience must be positive");
    if (weight_decay < 0.0) throw ConfigError("train: weight_decay must be nonnegative");
    if (clip_norm <= 0.0) throw ConfigError("train: clip_norm must be positive");
}

// ---------------------------------------------------------------------------
// optimizer
// ---------------------------------------------------------------------------

void optimizer_step(ParamStore& params, AdamState& state, const TrainConfig& cfg, double lr) {
    for (const auto& [name, p] : params.all()) {
        if (p.grad().size() != p.size() && !p.grad().empty())
            throw ShapeError("optimizer_step: grad/value size mismatch for " + name);
        for (double g : p.grad())
            if (!std::isfinite(g))
                throw NumericError("optimizer_step: non-finite gradient in " + name +
                                   "; step refused");
    }

    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));

    for (auto& [name, p] : params.all()) {
        auto& m = state.m[name];
        auto& v = state.v[name];
        if (m.size() != p.size()) m.assign(p.size(), 0.0);
        if (v.size() != p.size()) v.assign(p.size(), 0.0);
        const bool has_grad = p.grad().size() == p.size();

        auto& w = p.value();
        for (size_t i = 0; i < w.size(); ++i) {
            const double g = has_grad ? p.grad()[i] : 0.0;
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            // decoupled weight decay scaled by the current lr
            w[i] -= lr * mhat / (std::sqrt(vhat) + cfg.adam_eps) + lr * cfg.weight_decay * w[i];
        }
    }
}

double clip_gradients(ParamStore& params, double max_norm) {
    double sq = 0.0;
    for (const auto& [name, p] : params.all())
        for (double g : p.grad()) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const double s = max_norm / norm;
        for (auto& [name, p] : params.all())
            for (double& g : p.grad()) g *= s;
    }
    return norm;
}

double lr_schedule(std::int64_t step, std::int64_t warmup_steps, std::int64_t max_steps,
                   double lr_peak) {
    if (step < 0) throw ParameterError("lr_schedule: negative step");
    if (warmup_steps > 0 && step < warmup_steps)
        return lr_peak * static_cast<double>(step) / static_cast<double>(warmup_steps);
    if (step >= max_steps) return 0.0;
    const double progress = static_cast<double>(step - warmup_steps) /
                            static_cast<double>(max_steps - warmup_steps);
    return lr_peak * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    return splitmix64(splitmix64(seed ^ splitmix64(a)) ^ b);
}

Tensor batch_loss(const CrossViViT& model, const std::vector<SampleInput>& inputs,
                  const nnet::ForwardOptions& opts) {
    std::vector<const SampleInput*> ptrs;
    ptrs.reserve(inputs.size());
    std::vector<double> target;
    for (const auto& in : inputs) {
        if (in.target.empty()) throw ValidationError("training sample has no target window");
        ptrs.push_back(&in);
        target.insert(target.end(), in.target.begin(), in.target.end());
    }

    Tensor out = model.forward(ptrs, opts);  // [B, T, Q]
    const auto& cfg = model.config();
    if (!cfg.multiquantile()) return nnet::mae_loss(out, target);

    Tensor total;
    for (int q = 0; q < cfg.num_mlp_heads; ++q) {
        Tensor col = nnet::slice_lastdim(out, q, 1);
        Tensor l = nnet::pinball_loss(col, target, cfg.quantiles[q]);
        total = q == 0 ? l : nnet::add(total, l);
    }
    return total;
}

}  // namespace

double dataset_loss(const CrossViViT& model, const std::vector<geodata::Sample>& samples,
                    const geodata::NormStats& stats, bool zero_context, int batch_size) {
    if (samples.empty()) throw ConfigError("dataset_loss: empty dataset");
    nnet::ForwardOptions opts;  // eval mode: no masking, no dropout
    double total = 0.0;
    size_t done = 0;
    while (done < samples.size()) {
        const size_t n = std::min<size_t>(batch_size, samples.size() - done);
        std::vector<SampleInput> inputs;
        inputs.reserve(n);
        for (size_t i = 0; i < n; ++i)
            inputs.push_back(
                nnet::assemble_input(samples[done + i], stats, model.config(), zero_context));
        total += batch_loss(model, inputs, opts).item() * static_cast<double>(n);
        done += n;
    }
    return total / static_cast<double>(samples.size());
}

TrainResult train_model(CrossViViT& model, const TrainDataset& data, const TrainConfig& cfg,
                        const EpochCallback& on_epoch, AdamState* state_io,
                        TrainLoopState* loop_io) {
    cfg.validate();
    if (data.train.empty()) throw ConfigError("train: empty training dataset");
    if (data.val.empty()) throw ConfigError("train: empty validation dataset");
    if (cfg.strict_deterministic) nnet::set_num_threads(1);

    const auto& mcfg = model.config();
    const std::int64_t steps_per_epoch =
        (static_cast<std::int64_t>(data.train.size()) + cfg.batch_size - 1) / cfg.batch_size;
    const std::int64_t warmup_steps = cfg.warmup_epochs * steps_per_epoch;
    const std::int64_t max_steps = cfg.max_epochs * steps_per_epoch;

    AdamState local_state;
    AdamState& state = state_io ? *state_io : local_state;
    TrainLoopState local_loop;
    TrainLoopState& loop = loop_io ? *loop_io : local_loop;

    TrainResult result;
    result.best_val = loop.best_val;
    result.best_epoch = loop.best_epoch;

    for (int epoch = loop.next_epoch; epoch < cfg.max_epochs; ++epoch) {
        // Per-epoch generators are derived, not carried, so resuming from a
        // checkpoint replays the identical stream.
        std::mt19937_64 shuffle_rng(mix_seed(cfg.seed, 0x5348, epoch));
        std::vector<size_t> order(data.train.size());
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double epoch_loss = 0.0;
        double last_lr = 0.0;
        std::int64_t batch_index = 0;
        size_t done = 0;
        while (done < order.size()) {
            const size_t n = std::min<size_t>(cfg.batch_size, order.size() - done);
            std::mt19937_64 batch_rng(mix_seed(cfg.seed, epoch + 1, batch_index));

            nnet::ForwardOptions opts;
            opts.training = true;
            opts.rng = &batch_rng;
            if (mcfg.ctx_masking_ratio > 0.0) {
                std::uniform_real_distribution<double> uni(0.0, mcfg.ctx_masking_ratio);
                opts.ctx_mask_ratio = uni(batch_rng);
            }
            opts.ts_mask_ratio = mcfg.ts_masking_ratio;

            std::vector<SampleInput> inputs;
            inputs.reserve(n);
            for (size_t i = 0; i < n; ++i)
                inputs.push_back(nnet::assemble_input(data.train[order[done + i]], data.stats,
                                                      mcfg, data.zero_context));

            model.params().zero_grad();
            Tensor loss = batch_loss(model, inputs, opts);
            loss.backward();
            clip_gradients(model.params(), cfg.clip_norm);

            const std::int64_t global_step =
                static_cast<std::int64_t>(epoch) * steps_per_epoch + batch_index;
            last_lr = lr_schedule(global_step, warmup_steps, max_steps, cfg.lr_peak);
            optimizer_step(model.params(), state, cfg, last_lr);

            epoch_loss += loss.item() * static_cast<double>(n);
            done += n;
            ++batch_index;
        }
        epoch_loss /= static_cast<double>(order.size());

        const double val_loss =
            dataset_loss(model, data.val, data.stats, data.zero_context, cfg.batch_size);

        EpochRecord rec{epoch, epoch_loss, val_loss, last_lr};
        result.history.push_back(rec);
        result.epochs_run = epoch + 1;
        loop.next_epoch = epoch + 1;
        if (on_epoch) on_epoch(rec);

        if (val_loss < loop.best_val) {
            loop.best_val = val_loss;
            loop.best_epoch = epoch;
            loop.since_best = 0;
            result.best_weights.clear();
            for (const auto& [name, p] : model.params().all())
                result.best_weights[name] = p.value();
        } else if (++loop.since_best >= cfg.patience) {
            break;
        }
    }

    result.best_val = loop.best_val;
    result.best_epoch = loop.best_epoch;
    return result;
}

// ---------------------------------------------------------------------------
// gradient checking
// ---------------------------------------------------------------------------

namespace {

using Leaves = std::vector<std::pair<std::string, Tensor>>;
// Hook applied to the leaves after creation, before the graph is built; the
// FD driver uses it to nudge one coordinate and rebuild.
using Perturb = std::function<void(Leaves&)>;

struct CheckCase {
    std::string name;
    int max_coords_per_leaf = 160;
    std::function<std::pair<Tensor, Leaves>(std::mt19937_64&, const Perturb&)> build;
};

std::vector<double> randn(std::mt19937_64& rng, size_t n, double scale = 1.0) {
    std::normal_distribution<double> d(0.0, scale);
    std::vector<double> out(n);
    for (double& x : out) x = d(rng);
    return out;
}

Tensor leaf(std::mt19937_64& rng, std::vector<int> shape, double scale = 1.0) {
    const size_t n = nnet::numel(shape);
    return Tensor::param(std::move(shape), randn(rng, n, scale));
}

// Smooth scalar readout so finite differences are well conditioned.
Tensor smooth_readout(const Tensor& x) { return nnet::mean_all(nnet::mul(x, x)); }

double relative_err(double a, double b) {
    const double denom = std::max({std::abs(a), std::abs(b), 1e-8});
    return std::abs(a - b) / denom;
}

nnet::ModelConfig micro_config() {
    nnet::ModelConfig cfg;
    cfg.dim = 16;
    cfg.depth = 2;
    cfg.heads = 2;
    cfg.dim_head = 8;
    cfg.mlp_ratio = 2;
    cfg.dropout = 0.0;
    cfg.decoder_dim = 8;
    cfg.decoder_depth = 1;
    cfg.decoder_heads = 1;
    cfg.decoder_dim_head = 8;
    cfg.num_mlp_heads = 1;
    cfg.patch_size = 4;
    cfg.hist_len = 6;
    cfg.pred_len = 6;
    cfg.ts_channels = 3;
    cfg.ctx_channels = 2;
    cfg.grid_h = 8;
    cfg.grid_w = 8;
    return cfg;
}

SampleInput random_micro_input(const nnet::ModelConfig& cfg, std::mt19937_64& rng) {
    SampleInput in;
    const int T = cfg.hist_len;
    in.series = std::make_shared<std::vector<double>>(
        randn(rng, static_cast<size_t>(T) * cfg.ts_input_dim()));
    in.ctx_patches = std::make_shared<std::vector<double>>(
        randn(rng, static_cast<size_t>(T) * cfg.patches_per_frame() * cfg.patch_dim()));
    std::vector<embed::NormCoords> pos;
    std::uniform_real_distribution<double> uni(-0.5, 0.5);
    for (int i = 0; i < cfg.patches_per_frame(); ++i) pos.push_back({uni(rng), uni(rng)});
    auto ph = embed::rope_phases(pos, cfg.dim_head, cfg.max_freq);
    in.patch_sin = std::make_shared<std::vector<double>>(std::move(ph.sin));
    in.patch_cos = std::make_shared<std::vector<double>>(std::move(ph.cos));
    auto st = embed::rope_phases({{uni(rng), uni(rng)}}, cfg.dim_head, cfg.max_freq);
    in.station_sin = std::make_shared<std::vector<double>>(std::move(st.sin));
    in.station_cos = std::make_shared<std::vector<double>>(std::move(st.cos));
    in.target = randn(rng, static_cast<size_t>(cfg.pred_len));
    return in;
}

std::vector<CheckCase> registry(bool inject_bug) {
    std::vector<CheckCase> cases;

    cases.push_back({"linear", 160, [](std::mt19937_64& rng, const Perturb& perturb) {
        Leaves leaves{{"x", leaf(rng, {3, 5, 7})},
                      {"w", leaf(rng, {7, 4}, 0.5)},
                      {"b", leaf(rng, {4}, 0.5)}};
        perturb(leaves);
        Tensor out = nnet::add(nnet::matmul(leaves[0].second, leaves[1].second), leaves[2].second);
        return std::make_pair(smooth_readout(out), leaves);
    }});

    cases.push_back({"matmul_batched", 120, [](std::mt19937_64& rng, const Perturb& perturb) {
        Leaves leaves{{"a", leaf(rng, {2, 3, 4, 5})}, {"b", leaf(rng, {2, 3, 5, 6})}};
        perturb(leaves);
        Tensor out = nnet::matmul(leaves[0].second, leaves[1].second);
        return std::make_pair(smooth_readout(out), leaves);
    }});

    cases.push_back({"layer_norm", 120, [](std::mt19937_64& rng, const Perturb& perturb) {
        Leaves leaves{{"x", leaf(rng, {4, 9})},
                      {"gain", leaf(rng, {9}, 0.5)},
                      {"bias", leaf(rng, {9}, 0.5)}};
        perturb(leaves);
        Tensor out = nnet::layer_norm(leaves[0].second, leaves[1].second, leaves[2].second);
        return std::make_pair(smooth_readout(out), leaves);
    }});

    cases.push_back({"softmax", 120, [](std::mt19937_64& rng, const Perturb& perturb) {
        Leaves leaves{{"x", leaf(rng, {5, 11})}};
        perturb(leaves);
        return std::make_pair(smooth_readout(nnet::softmax_lastdim(leaves[0].second)), leaves);
    }});

    cases.push_back({"gelu", 120, [](std::mt19937_64& rng, const Perturb& perturb) {
        Leaves leaves{{"x", leaf(rng, {6, 8})}};
        perturb(leaves);
        return std::make_pair(smooth_readout(nnet::gelu(leaves[0].second)), leaves);
    }});

    cases.push_back({"glu_mlp", 100, [](std::mt19937_64& rng, const Perturb& perturb) {
        Leaves leaves{{"x", leaf(rng, {2, 4, 6})},
                      {"w1", leaf(rng, {6, 16}, 0.5)},
                      {"w2", leaf(rng, {8, 6}, 0.5)}};
        perturb(leaves);
        Tensor h1 = nnet::matmul(leaves[0].second, leaves[1].second);
        Tensor a = nnet::slice_lastdim(h1, 0, 8);
        Tensor g = nnet::slice_lastdim(h1, 8, 8);
        Tensor out = nnet::matmul(nnet::mul(a, nnet::gelu(g)), leaves[2].second);
        return std::make_pair(smooth_readout(out), leaves);
    }});

    cases.push_back({"rotary", 96, [](std::mt19937_64& rng, const Perturb& perturb) {
        const int B = 2, H = 2, N = 3, D = 8;
        Leaves leaves{{"x", leaf(rng, {B, H, N, D})}};
        std::uniform_real_distribution<double> uni(-0.8, 0.8);
        std::vector<embed::NormCoords> pos;
        for (int i = 0; i < B * N; ++i) pos.push_back({uni(rng), uni(rng)});
        auto ph = embed::rope_phases(pos, D, 32.0);
        auto sin = std::make_shared<std::vector<double>>(std::move(ph.sin));
        auto cos = std::make_shared<std::vector<double>>(std::move(ph.cos));
        perturb(leaves);
        return std::make_pair(smooth_readout(nnet::rotary(leaves[0].second, sin, cos)), leaves);
    }});

    cases.push_back({"concat_permute", 100, [](std::mt19937_64& rng, const Perturb& perturb) {
        Leaves leaves{{"a", leaf(rng, {2, 3, 4, 2})}, {"b", leaf(rng, {2, 3, 4, 3})}};
        perturb(leaves);
        Tensor out = nnet::permute_0213(nnet::concat_lastdim({leaves[0].second, leaves[1].second}));
        return std::make_pair(smooth_readout(out), leaves);
    }});

    // Loss kinks: targets are offset from the prediction so the FD stencil
    // stays on one linear piece.
    cases.push_back({"mae", 24, [](std::mt19937_64& rng, const Perturb& perturb) {
        Leaves leaves{{"pred", leaf(rng, {4, 6})}};
        std::vector<double> target(leaves[0].second.size());
        for (size_t i = 0; i < target.size(); ++i)
            target[i] = leaves[0].second.value()[i] + (i % 2 == 0 ? 0.7 : -0.7);
        perturb(leaves);
        return std::make_pair(nnet::mae_loss(leaves[0].second, target), leaves);
    }});

    cases.push_back({"pinball", 24, [](std::mt19937_64& rng, const Perturb& perturb) {
        Leaves leaves{{"pred", leaf(rng, {4, 6})}};
        std::vector<double> target(leaves[0].second.size());
        for (size_t i = 0; i < target.size(); ++i)
            target[i] = leaves[0].second.value()[i] + (i % 2 == 0 ? 0.9 : -0.9);
        perturb(leaves);
        return std::make_pair(nnet::pinball_loss(leaves[0].second, target, 0.9), leaves);
    }});

    cases.push_back({"attention_rotary", 64, [](std::mt19937_64& rng, const Perturb& perturb) {
        // One cross-attention layer with rotary phases on q and k.
        const int B = 2, Nq = 3, Nk = 5, D = 8, H = 2;
        Leaves leaves{{"q_tokens", leaf(rng, {B, Nq, D})}, {"kv_tokens", leaf(rng, {B, Nk, D})},
                      {"wq", leaf(rng, {D, 8}, 0.5)},      {"wk", leaf(rng, {D, 8}, 0.5)},
                      {"wv", leaf(rng, {D, 8}, 0.5)},      {"wo", leaf(rng, {8, D}, 0.5)}};
        std::uniform_real_distribution<double> uni(-0.8, 0.8);
        std::vector<embed::NormCoords> qpos, kpos;
        for (int i = 0; i < B * Nq; ++i) qpos.push_back({uni(rng), uni(rng)});
        for (int i = 0; i < B * Nk; ++i) kpos.push_back({uni(rng), uni(rng)});
        auto qp = embed::rope_phases(qpos, 4, 16.0);
        auto kp = embed::rope_phases(kpos, 4, 16.0);
        auto qs = std::make_shared<std::vector<double>>(std::move(qp.sin));
        auto qc = std::make_shared<std::vector<double>>(std::move(qp.cos));
        auto ks = std::make_shared<std::vector<double>>(std::move(kp.sin));
        auto kc = std::make_shared<std::vector<double>>(std::move(kp.cos));
        perturb(leaves);
        auto split = [&](const Tensor& t, int n) {
            return nnet::permute_0213(nnet::reshape(t, {B, n, H, 4}));
        };
        Tensor q = nnet::rotary(split(nnet::matmul(leaves[0].second, leaves[2].second), Nq), qs, qc);
        Tensor k = nnet::rotary(split(nnet::matmul(leaves[1].second, leaves[3].second), Nk), ks, kc);
        Tensor v = split(nnet::matmul(leaves[1].second, leaves[4].second), Nk);
        Tensor w = nnet::softmax_lastdim(nnet::scale(nnet::matmul(q, nnet::transpose_last2(k)), 0.5));
        Tensor o = nnet::reshape(nnet::permute_0213(nnet::matmul(w, v)), {B, Nq, 8});
        Tensor out = nnet::matmul(o, leaves[5].second);
        return std::make_pair(smooth_readout(out), leaves);
    }});

    cases.push_back({"encoder_stack", 48, [](std::mt19937_64& rng, const Perturb& perturb) {
        // Two pre-norm residual blocks, d = 16; checks the input gradient too.
        const int B = 2, N = 4, D = 16, H = 2, Dh = 8, hidden = 32;
        Leaves leaves{{"input", leaf(rng, {B, N, D})}};
        struct Block {
            int wq, wk, wv, wo, g1, b1, g2, b2, m1, m2;
        };
        std::vector<Block> blocks;
        for (int l = 0; l < 2; ++l) {
            Block blk;
            auto put = [&](const std::string& nm, std::vector<int> shape, double s) {
                leaves.push_back({nm + std::to_string(l), leaf(rng, std::move(shape), s)});
                return static_cast<int>(leaves.size()) - 1;
            };
            blk.wq = put("wq", {D, H * Dh}, 0.4);
            blk.wk = put("wk", {D, H * Dh}, 0.4);
            blk.wv = put("wv", {D, H * Dh}, 0.4);
            blk.wo = put("wo", {H * Dh, D}, 0.4);
            blk.g1 = put("ln1g", {D}, 0.3);
            blk.b1 = put("ln1b", {D}, 0.3);
            blk.g2 = put("ln2g", {D}, 0.3);
            blk.b2 = put("ln2b", {D}, 0.3);
            blk.m1 = put("mlpw1", {D, hidden}, 0.4);
            blk.m2 = put("mlpw2", {hidden, D}, 0.4);
            blocks.push_back(blk);
        }
        perturb(leaves);
        Tensor x = leaves[0].second;
        for (const Block& blk : blocks) {
            Tensor n1 = nnet::layer_norm(x, leaves[blk.g1].second, leaves[blk.b1].second);
            auto split = [&](const Tensor& t) {
                return nnet::permute_0213(nnet::reshape(t, {B, N, H, Dh}));
            };
            Tensor q = split(nnet::matmul(n1, leaves[blk.wq].second));
            Tensor k = split(nnet::matmul(n1, leaves[blk.wk].second));
            Tensor v = split(nnet::matmul(n1, leaves[blk.wv].second));
            Tensor w =
                nnet::softmax_lastdim(nnet::scale(nnet::matmul(q, nnet::transpose_last2(k)),
                                                  1.0 / std::sqrt(double(Dh))));
            Tensor att = nnet::reshape(nnet::permute_0213(nnet::matmul(w, v)), {B, N, H * Dh});
            Tensor y = nnet::add(nnet::matmul(att, leaves[blk.wo].second), x);
            Tensor n2 = nnet::layer_norm(y, leaves[blk.g2].second, leaves[blk.b2].second);
            Tensor h = nnet::gelu(nnet::matmul(n2, leaves[blk.m1].second));
            x = nnet::add(nnet::matmul(h, leaves[blk.m2].second), y);
        }
        return std::make_pair(smooth_readout(x), leaves);
    }});

    cases.push_back({"crossvivit_micro", 8, [](std::mt19937_64& rng, const Perturb& perturb) {
        auto cfg = micro_config();
        auto model = std::make_shared<CrossViViT>(cfg, 12345);
        // Shake every parameter off its init so zero out-projections do not
        // leave whole paths vacuously gradient-free.
        {
            std::mt19937_64 shake(777);
            std::normal_distribution<double> d(0.0, 0.05);
            for (auto& [name, p] : model->params().all())
                for (double& v : p.value()) v += d(shake);
        }
        SampleInput input = random_micro_input(cfg, rng);
        Leaves leaves;
        for (const auto& name :
             {"ctx_embed.W", "ts_embed.W", "ts_pos", "ctx_enc.0.attn.Wq", "ctx_enc.1.mlp.W1",
              "ts_enc.0.attn.Wv", "ts_enc.1.ln1.g", "mix.0.attn.Wq", "mix.1.attn.Wo",
              "mix.0.mlp.W2", "bridge.W", "dec_pos", "dec.0.attn.Wq", "dec.0.ln3.g", "head.0.W1",
              "head.0.W2"})
            leaves.push_back({name, model->params().at(name)});
        perturb(leaves);
        nnet::ForwardOptions opts;
        Tensor out = model->forward({&input}, opts);
        // Keep the model alive as long as the loss graph via a capture.
        Tensor loss = smooth_readout(out);
        auto holder = loss.node();
        holder->backward = [inner = holder->backward, model](Tensor::Node& self) {
            if (inner) inner(self);
        };
        return std::make_pair(loss, leaves);
    }});

    if (inject_bug) {
        cases.push_back({"corrupted_linear", 16, [](std::mt19937_64& rng, const Perturb& perturb) {
            Leaves leaves{{"w", leaf(rng, {4, 2})}};
            Tensor x = Tensor::constant({3, 4}, randn(rng, 12));
            perturb(leaves);
            Tensor out = nnet::matmul(x, leaves[0].second);
            auto node = out.node();
            node->backward = [inner = node->backward](Tensor::Node& self) {
                for (double& g : self.grad) g *= 1.5;  // deliberately wrong
                if (inner) inner(self);
            };
            return std::make_pair(smooth_readout(out), leaves);
        }});
    }

    return cases;
}

}  // namespace

std::vector<std::string> grad_check_op_names() {
    std::vector<std::string> names;
    for (const auto& c : registry(false)) names.push_back(c.name);
    return names;
}

std::vector<GradCheckReport> run_grad_checks(double tolerance, const std::string& only,
                                             bool inject_bug) {
    std::vector<GradCheckReport> reports;
    const std::uint64_t base_seed = 0xC0FFEEULL;

    for (const auto& c : registry(inject_bug)) {
        if (!only.empty() && c.name != only) continue;
        const std::uint64_t seed = base_seed + std::hash<std::string>{}(c.name);

        auto build_with = [&](const Perturb& p) {
            std::mt19937_64 rng(seed);
            return c.build(rng, p);
        };
        auto no_op = [](Leaves&) {};

        auto [loss, leaves] = build_with(no_op);
        loss.backward();
        std::vector<std::vector<double>> analytic;
        for (auto& [name, t] : leaves) {
            if (t.grad().size() != t.size())
                t.grad().assign(t.size(), 0.0);  // leaf unused by the graph
            analytic.push_back(t.grad());
        }

        GradCheckReport rep;
        rep.op = c.name;
        std::mt19937_64 pick_rng(17);

        for (size_t li = 0; li < leaves.size(); ++li) {
            std::vector<size_t> coords(leaves[li].second.size());
            std::iota(coords.begin(), coords.end(), 0);
            if (coords.size() > static_cast<size_t>(c.max_coords_per_leaf)) {
                std::shuffle(coords.begin(), coords.end(), pick_rng);
                coords.resize(c.max_coords_per_leaf);
            }
            for (size_t idx : coords) {
                const double x0 = leaves[li].second.value()[idx];
                const double h = 1e-5 * std::max(1.0, std::abs(x0));
                auto nudge = [&](double delta) {
                    return [li, idx, delta](Leaves& ls) { ls[li].second.value()[idx] += delta; };
                };
                const double f_plus = build_with(nudge(h)).first.item();
                const double f_minus = build_with(nudge(-h)).first.item();
                const double fd = (f_plus - f_minus) / (2.0 * h);
                const double err = relative_err(analytic[li][idx], fd);
                if (err > rep.max_rel_err) {
                    rep.max_rel_err = err;
                    rep.worst_tensor = leaves[li].first;
                }
            }
        }
        rep.pass = rep.max_rel_err < tolerance;
        reports.push_back(rep);
    }
    return reports;
}

}  // namespace heliocast::train
