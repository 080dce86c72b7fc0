#include "heliocast/model.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

namespace heliocast::nnet {

using nlohmann::json;

void ModelConfig::validate() const {
    if (dim <= 0 || decoder_dim <= 0) throw ConfigError("model: dims must be positive");
    if (depth < 0 || decoder_depth < 0) throw ConfigError("model: depths must be nonnegative");
    if (heads <= 0 || dim_head <= 0 || decoder_heads <= 0 || decoder_dim_head <= 0)
        throw ConfigError("model: head counts and head dims must be positive");
    if (dim_head % 4 != 0)
        throw ConfigError("model: dim_head must be divisible by 4 for rotary phases");
    if (mlp_ratio < 1) throw ConfigError("model: mlp_ratio must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("model: dropout must lie in [0, 1)");
    if (patch_size <= 0 || grid_h % patch_size != 0 || grid_w % patch_size != 0)
        throw ConfigError("model: patch size must divide the context grid");
    if (hist_len != pred_len)
        throw ConfigError("model: history and horizon lengths must match");
    if (hist_len <= 0) throw ConfigError("model: window length must be positive");
    if (ts_channels <= 0 || ctx_channels <= 0)
        throw ConfigError("model: channel counts must be set from the dataset");
    if (ctx_masking_ratio < 0.0 || ctx_masking_ratio > 0.99 || ts_masking_ratio < 0.0 ||
        ts_masking_ratio > 0.99)
        throw ConfigError("model: masking ratios must lie in [0, 0.99]");
    if (num_mlp_heads < 1) throw ConfigError("model: need at least one prediction head");
    if (num_mlp_heads > 1) {
        if (static_cast<int>(quantiles.size()) != num_mlp_heads)
            throw ConfigError("model: quantile list must match num_mlp_heads");
        for (size_t i = 0; i < quantiles.size(); ++i) {
            if (quantiles[i] <= 0.0 || quantiles[i] >= 1.0)
                throw ConfigError("model: quantile levels must lie in (0, 1)");
            if (i > 0 && quantiles[i] <= quantiles[i - 1])
                throw ConfigError("model: quantile levels must be strictly increasing");
        }
    }
}

Tensor& ParamStore::create(const std::string& name, std::vector<int> shape) {
    if (map_.count(name)) throw ConfigError("duplicate parameter: " + name);
    auto [it, ok] = map_.emplace(name, Tensor::zeros(shape, true));
    return it->second;
}

Tensor& ParamStore::at(const std::string& name) {
    auto it = map_.find(name);
    if (it == map_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
    auto it = map_.find(name);
    if (it == map_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
}

size_t ParamStore::total_values() const {
    size_t n = 0;
    for (const auto& [k, v] : map_) n += v.size();
    return n;
}

void ParamStore::zero_grad() {
    for (auto& [k, v] : map_) v.zero_grad();
}

// ---------------------------------------------------------------------------
// ForecastDistribution
// ---------------------------------------------------------------------------

void ForecastDistribution::sort_fan() {
    const int q = static_cast<int>(quantile_levels.size());
    for (int t = 0; t < steps; ++t)
        std::sort(values.begin() + static_cast<size_t>(t) * q,
                  values.begin() + static_cast<size_t>(t + 1) * q);
}

bool ForecastDistribution::fan_monotone() const {
    const int q = static_cast<int>(quantile_levels.size());
    for (int t = 0; t < steps; ++t)
        for (int i = 1; i < q; ++i)
            if (at(t, i) < at(t, i - 1)) return false;
    return true;
}

std::vector<double> ForecastDistribution::column(int q) const {
    std::vector<double> out(steps);
    for (int t = 0; t < steps; ++t) out[t] = at(t, q);
    return out;
}

int ForecastDistribution::level_index(double level, double tol) const {
    for (size_t i = 0; i < quantile_levels.size(); ++i)
        if (std::abs(quantile_levels[i] - level) <= tol) return static_cast<int>(i);
    return -1;
}

// ---------------------------------------------------------------------------
// parameter construction
// ---------------------------------------------------------------------------

CrossViViT::CrossViViT(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    build_params(seed);
}

CrossViViT::CrossViViT(ModelConfig cfg, ParamStore params)
    : cfg_(std::move(cfg)), params_(std::move(params)) {
    cfg_.validate();
}

namespace {

void fill_gaussian(Tensor& t, std::mt19937_64& rng, double std_dev) {
    std::normal_distribution<double> dist(0.0, std_dev);
    for (double& v : t.value()) v = dist(rng);
}

void fill_ones(Tensor& t) { std::fill(t.value().begin(), t.value().end(), 1.0); }

}  // namespace

void CrossViViT::build_params(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const double w_std = 0.02;
    const int inner = cfg_.attn_inner();
    const int dec_inner = cfg_.decoder_heads * cfg_.decoder_dim_head;

    auto make_ln = [&](const std::string& prefix, int d) {
        fill_ones(params_.create(prefix + ".g", {d}));
        params_.create(prefix + ".b", {d});
    };
    auto make_attn = [&](const std::string& prefix, int d_model, int att_inner) {
        fill_gaussian(params_.create(prefix + ".Wq", {d_model, att_inner}), rng, w_std);
        params_.create(prefix + ".bq", {att_inner});
        fill_gaussian(params_.create(prefix + ".Wk", {d_model, att_inner}), rng, w_std);
        params_.create(prefix + ".bk", {att_inner});
        fill_gaussian(params_.create(prefix + ".Wv", {d_model, att_inner}), rng, w_std);
        params_.create(prefix + ".bv", {att_inner});
        // zero out-projection: every residual block starts as the identity
        params_.create(prefix + ".Wo", {att_inner, d_model});
        params_.create(prefix + ".bo", {d_model});
    };
    auto make_mlp = [&](const std::string& prefix, int d_model) {
        const int hidden = cfg_.mlp_ratio * d_model;
        const int first = cfg_.use_glu ? 2 * hidden : hidden;
        fill_gaussian(params_.create(prefix + ".W1", {d_model, first}), rng, w_std);
        params_.create(prefix + ".b1", {first});
        params_.create(prefix + ".W2", {hidden, d_model});
        params_.create(prefix + ".b2", {d_model});
    };

    fill_gaussian(params_.create("ctx_embed.W", {cfg_.patch_dim(), cfg_.dim}), rng, w_std);
    params_.create("ctx_embed.b", {cfg_.dim});
    fill_gaussian(params_.create("ts_embed.W", {cfg_.ts_input_dim(), cfg_.dim}), rng, w_std);
    params_.create("ts_embed.b", {cfg_.dim});
    fill_gaussian(params_.create("ts_pos", {cfg_.hist_len, cfg_.dim}), rng, w_std);
    fill_gaussian(params_.create("ts_mask_token", {cfg_.dim}), rng, w_std);

    for (int l = 0; l < cfg_.depth; ++l) {
        for (const std::string stack : {"ctx_enc", "ts_enc"}) {
            const std::string p = stack + "." + std::to_string(l);
            make_ln(p + ".ln1", cfg_.dim);
            make_attn(p + ".attn", cfg_.dim, inner);
            make_ln(p + ".ln2", cfg_.dim);
            make_mlp(p + ".mlp", cfg_.dim);
        }
        const std::string m = "mix." + std::to_string(l);
        make_ln(m + ".lnq", cfg_.dim);
        make_ln(m + ".lnkv", cfg_.dim);
        make_attn(m + ".attn", cfg_.dim, inner);
        make_ln(m + ".ln2", cfg_.dim);
        make_mlp(m + ".mlp", cfg_.dim);
    }

    fill_gaussian(params_.create("bridge.W", {cfg_.dim, cfg_.decoder_dim}), rng, w_std);
    params_.create("bridge.b", {cfg_.decoder_dim});
    fill_gaussian(params_.create("dec_pos", {cfg_.hist_len, cfg_.decoder_dim}), rng, w_std);

    for (int n = 0; n < cfg_.decoder_depth; ++n) {
        const std::string p = "dec." + std::to_string(n);
        make_ln(p + ".ln1", cfg_.decoder_dim);
        make_attn(p + ".attn", cfg_.decoder_dim, dec_inner);
        make_ln(p + ".ln2", cfg_.decoder_dim);
        make_mlp(p + ".mlp", cfg_.decoder_dim);
        make_ln(p + ".ln3", cfg_.decoder_dim);
    }

    for (int q = 0; q < cfg_.num_mlp_heads; ++q) {
        const std::string p = "head." + std::to_string(q);
        fill_gaussian(params_.create(p + ".W1", {cfg_.decoder_dim, cfg_.decoder_dim}), rng, w_std);
        params_.create(p + ".b1", {cfg_.decoder_dim});
        fill_gaussian(params_.create(p + ".W2", {cfg_.decoder_dim, 1}), rng, w_std);
        params_.create(p + ".b2", {1});
    }
}

// ---------------------------------------------------------------------------
// forward building blocks
// ---------------------------------------------------------------------------

Tensor CrossViViT::attention(const Tensor& q_tokens, const Tensor& kv_tokens,
                             const std::string& prefix, int n_heads, int d_head,
                             const std::shared_ptr<const std::vector<double>>& q_sin,
                             const std::shared_ptr<const std::vector<double>>& q_cos,
                             const std::shared_ptr<const std::vector<double>>& k_sin,
                             const std::shared_ptr<const std::vector<double>>& k_cos,
                             const ForwardOptions& opts) const {
    const int B = q_tokens.dim(0);
    const int Nq = q_tokens.dim(1);
    const int Nk = kv_tokens.dim(1);
    const int inner = n_heads * d_head;

    auto heads_of = [&](const Tensor& x, const char* w, const char* b, int n_tokens) {
        Tensor proj = add(matmul(x, params_.at(prefix + w)), params_.at(prefix + b));
        return permute_0213(reshape(proj, {B, n_tokens, n_heads, d_head}));
    };

    Tensor q = heads_of(q_tokens, ".Wq", ".bq", Nq);
    Tensor k = heads_of(kv_tokens, ".Wk", ".bk", Nk);
    Tensor v = heads_of(kv_tokens, ".Wv", ".bv", Nk);

    if (q_sin) q = rotary(q, q_sin, q_cos);
    if (k_sin) k = rotary(k, k_sin, k_cos);

    Tensor scores = scale(matmul(q, transpose_last2(k)), 1.0 / std::sqrt(double(d_head)));
    Tensor weights = softmax_lastdim(scores);
    if (opts.training && cfg_.dropout > 0.0) weights = dropout(weights, cfg_.dropout, *opts.rng);

    Tensor mixed = reshape(permute_0213(matmul(weights, v)), {B, Nq, inner});
    return add(matmul(mixed, params_.at(prefix + ".Wo")), params_.at(prefix + ".bo"));
}

Tensor CrossViViT::mlp_block(const Tensor& x, const std::string& prefix,
                             const ForwardOptions& opts) const {
    const int hidden = cfg_.mlp_ratio * x.shape().back();
    Tensor h1 = add(matmul(x, params_.at(prefix + ".W1")), params_.at(prefix + ".b1"));
    Tensor h;
    if (cfg_.use_glu) {
        Tensor a = slice_lastdim(h1, 0, hidden);
        Tensor g = slice_lastdim(h1, hidden, hidden);
        h = mul(a, gelu(g));
    } else {
        h = gelu(h1);
    }
    if (opts.training && cfg_.dropout > 0.0) h = dropout(h, cfg_.dropout, *opts.rng);
    return add(matmul(h, params_.at(prefix + ".W2")), params_.at(prefix + ".b2"));
}

namespace {

using PhaseBuf = std::shared_ptr<const std::vector<double>>;

}  // namespace

Tensor CrossViViT::forward(const std::vector<const SampleInput*>& batch,
                           const ForwardOptions& opts) const {
    if (batch.empty()) throw ShapeError("forward: empty batch");
    if (opts.training && opts.rng == nullptr)
        throw ConfigError("forward: training mode requires an rng");

    const int B = static_cast<int>(batch.size());
    const int T = cfg_.hist_len;
    const int Np = cfg_.patches_per_frame();
    const int pd = cfg_.patch_dim();
    const int D = cfg_.dim;
    const int Dh = cfg_.dim_head;
    const int ts_in = cfg_.ts_input_dim();
    blocks_executed = 0;

    for (const SampleInput* s : batch) {
        if (static_cast<int>(s->series->size()) != T * ts_in)
            throw ShapeError("forward: series input does not match config");
        if (static_cast<int>(s->ctx_patches->size()) != T * Np * pd)
            throw ShapeError("forward: context patches do not match config");
    }

    // --- context token selection (masking drops patches entirely) ---------
    const bool masking = opts.training && opts.ctx_mask_ratio > 0.0;
    const int Nk = masking
                       ? std::max(1, static_cast<int>(std::floor(Np * (1.0 - opts.ctx_mask_ratio))))
                       : Np;

    std::vector<double> ctx_vals(static_cast<size_t>(B) * T * Nk * pd);
    auto ctx_sin = std::make_shared<std::vector<double>>(static_cast<size_t>(B) * T * Nk * Dh);
    auto ctx_cos = std::make_shared<std::vector<double>>(static_cast<size_t>(B) * T * Nk * Dh);

    for (int b = 0; b < B; ++b) {
        const SampleInput& s = *batch[b];
        for (int t = 0; t < T; ++t) {
            std::vector<int> kept;
            if (masking) {
                kept = embed::mask_keep_indices(Np, opts.ctx_mask_ratio, *opts.rng);
            } else {
                kept.resize(Np);
                for (int i = 0; i < Np; ++i) kept[i] = i;
            }
            for (int j = 0; j < Nk; ++j) {
                const int p = kept[j];
                const size_t dst = ((static_cast<size_t>(b) * T + t) * Nk + j);
                std::copy(s.ctx_patches->begin() + (static_cast<size_t>(t) * Np + p) * pd,
                          s.ctx_patches->begin() + (static_cast<size_t>(t) * Np + p + 1) * pd,
                          ctx_vals.begin() + dst * pd);
                std::copy(s.patch_sin->begin() + static_cast<size_t>(p) * Dh,
                          s.patch_sin->begin() + static_cast<size_t>(p + 1) * Dh,
                          ctx_sin->begin() + dst * Dh);
                std::copy(s.patch_cos->begin() + static_cast<size_t>(p) * Dh,
                          s.patch_cos->begin() + static_cast<size_t>(p + 1) * Dh,
                          ctx_cos->begin() + dst * Dh);
            }
        }
    }

    // --- context encoder: frames along the batch dim ----------------------
    Tensor ctx = Tensor::constant({B * T, Nk, pd}, std::move(ctx_vals));
    ctx = add(matmul(ctx, params_.at("ctx_embed.W")), params_.at("ctx_embed.b"));
    for (int l = 0; l < cfg_.depth; ++l) {
        const std::string p = "ctx_enc." + std::to_string(l);
        Tensor normed = layer_norm(ctx, params_.at(p + ".ln1.g"), params_.at(p + ".ln1.b"));
        ctx = add(attention(normed, normed, p + ".attn", cfg_.heads, Dh, ctx_sin, ctx_cos,
                            ctx_sin, ctx_cos, opts),
                  ctx);
        Tensor normed2 = layer_norm(ctx, params_.at(p + ".ln2.g"), params_.at(p + ".ln2.b"));
        ctx = add(mlp_block(normed2, p + ".mlp", opts), ctx);
        ++blocks_executed;
    }
    Tensor ctx_lat = reshape(ctx, {B, T * Nk, D});

    // --- series encoder ----------------------------------------------------
    std::vector<double> ts_vals(static_cast<size_t>(B) * T * ts_in);
    for (int b = 0; b < B; ++b)
        std::copy(batch[b]->series->begin(), batch[b]->series->end(),
                  ts_vals.begin() + static_cast<size_t>(b) * T * ts_in);
    Tensor series = Tensor::constant({B, T, ts_in}, std::move(ts_vals));
    series = add(matmul(series, params_.at("ts_embed.W")), params_.at("ts_embed.b"));

    const bool ts_masking = opts.training && opts.ts_mask_ratio > 0.0;
    if (ts_masking) {
        const int ts_keep =
            std::max(1, static_cast<int>(std::floor(T * (1.0 - opts.ts_mask_ratio))));
        std::vector<double> gather_mat(static_cast<size_t>(B) * ts_keep * T, 0.0);
        std::vector<double> scatter_mat(static_cast<size_t>(B) * T * ts_keep, 0.0);
        std::vector<double> miss_mask(static_cast<size_t>(B) * T * D, 1.0);
        for (int b = 0; b < B; ++b) {
            auto kept = embed::mask_keep_indices(T, opts.ts_mask_ratio, *opts.rng);
            for (int j = 0; j < ts_keep; ++j) {
                const int t = kept[j];
                gather_mat[(static_cast<size_t>(b) * ts_keep + j) * T + t] = 1.0;
                scatter_mat[(static_cast<size_t>(b) * T + t) * ts_keep + j] = 1.0;
                std::fill(miss_mask.begin() + (static_cast<size_t>(b) * T + t) * D,
                          miss_mask.begin() + (static_cast<size_t>(b) * T + t + 1) * D, 0.0);
            }
        }
        Tensor gsel = Tensor::constant({B, ts_keep, T}, std::move(gather_mat));
        Tensor kept_tokens = matmul(gsel, series);                   // [B, keep, D]
        Tensor kept_pos = matmul(gsel, params_.at("ts_pos"));        // [B, keep, D]
        series = add(kept_tokens, kept_pos);
        for (int l = 0; l < cfg_.depth; ++l) {
            const std::string p = "ts_enc." + std::to_string(l);
            Tensor normed = layer_norm(series, params_.at(p + ".ln1.g"), params_.at(p + ".ln1.b"));
            series = add(attention(normed, normed, p + ".attn", cfg_.heads, Dh, nullptr, nullptr,
                                   nullptr, nullptr, opts),
                         series);
            Tensor normed2 = layer_norm(series, params_.at(p + ".ln2.g"), params_.at(p + ".ln2.b"));
            series = add(mlp_block(normed2, p + ".mlp", opts), series);
            ++blocks_executed;
        }
        // Re-insert a learned mask token (plus its positional row) at dropped
        // positions so the mixer always sees hist_len query tokens.
        Tensor ssel = Tensor::constant({B, T, ts_keep}, std::move(scatter_mat));
        Tensor scattered = matmul(ssel, series);  // [B, T, D]; dropped rows are zero
        Tensor fill = add(params_.at("ts_pos"), params_.at("ts_mask_token"));  // [T, D]
        Tensor fill_full = add(Tensor::zeros({B, T, D}), fill);
        Tensor miss = Tensor::constant({B, T, D}, std::move(miss_mask));
        series = add(scattered, mul(fill_full, miss));
    } else {
        series = add(series, params_.at("ts_pos"));
        for (int l = 0; l < cfg_.depth; ++l) {
            const std::string p = "ts_enc." + std::to_string(l);
            Tensor normed = layer_norm(series, params_.at(p + ".ln1.g"), params_.at(p + ".ln1.b"));
            series = add(attention(normed, normed, p + ".attn", cfg_.heads, Dh, nullptr, nullptr,
                                   nullptr, nullptr, opts),
                         series);
            Tensor normed2 = layer_norm(series, params_.at(p + ".ln2.g"), params_.at(p + ".ln2.b"));
            series = add(mlp_block(normed2, p + ".mlp", opts), series);
            ++blocks_executed;
        }
    }

    // --- mixer: queries from the series/mixed latent, keys/values fixed ----
    auto q_sin = std::make_shared<std::vector<double>>(static_cast<size_t>(B) * T * Dh);
    auto q_cos = std::make_shared<std::vector<double>>(static_cast<size_t>(B) * T * Dh);
    for (int b = 0; b < B; ++b)
        for (int t = 0; t < T; ++t) {
            std::copy(batch[b]->station_sin->begin(), batch[b]->station_sin->end(),
                      q_sin->begin() + (static_cast<size_t>(b) * T + t) * Dh);
            std::copy(batch[b]->station_cos->begin(), batch[b]->station_cos->end(),
                      q_cos->begin() + (static_cast<size_t>(b) * T + t) * Dh);
        }

    Tensor mixed = series;
    for (int l = 0; l < cfg_.depth; ++l) {
        const std::string p = "mix." + std::to_string(l);
        Tensor qn = layer_norm(mixed, params_.at(p + ".lnq.g"), params_.at(p + ".lnq.b"));
        Tensor kvn = layer_norm(ctx_lat, params_.at(p + ".lnkv.g"), params_.at(p + ".lnkv.b"));
        mixed = add(attention(qn, kvn, p + ".attn", cfg_.heads, Dh, q_sin, q_cos, ctx_sin, ctx_cos,
                              opts),
                    mixed);
        Tensor normed2 = layer_norm(mixed, params_.at(p + ".ln2.g"), params_.at(p + ".ln2.b"));
        mixed = add(mlp_block(normed2, p + ".mlp", opts), mixed);
        ++blocks_executed;
    }

    // --- decoder ------------------------------------------------------------
    Tensor z = add(matmul(mixed, params_.at("bridge.W")), params_.at("bridge.b"));
    z = add(z, params_.at("dec_pos"));
    for (int n = 0; n < cfg_.decoder_depth; ++n) {
        const std::string p = "dec." + std::to_string(n);
        Tensor normed = layer_norm(z, params_.at(p + ".ln1.g"), params_.at(p + ".ln1.b"));
        Tensor y = add(attention(normed, normed, p + ".attn", cfg_.decoder_heads,
                                 cfg_.decoder_dim_head, nullptr, nullptr, nullptr, nullptr, opts),
                       z);
        Tensor normed2 = layer_norm(y, params_.at(p + ".ln2.g"), params_.at(p + ".ln2.b"));
        Tensor inner = add(mlp_block(normed2, p + ".mlp", opts), y);
        z = layer_norm(inner, params_.at(p + ".ln3.g"), params_.at(p + ".ln3.b"));
        ++blocks_executed;
    }

    // --- parallel prediction heads ------------------------------------------
    std::vector<Tensor> outs;
    outs.reserve(cfg_.num_mlp_heads);
    for (int q = 0; q < cfg_.num_mlp_heads; ++q) {
        const std::string p = "head." + std::to_string(q);
        Tensor h = gelu(add(matmul(z, params_.at(p + ".W1")), params_.at(p + ".b1")));
        outs.push_back(add(matmul(h, params_.at(p + ".W2")), params_.at(p + ".b2")));
    }
    Tensor out = cfg_.num_mlp_heads == 1 ? outs[0] : concat_lastdim(outs);

    for (double v : out.value())
        if (!std::isfinite(v)) throw NumericError("forward: non-finite prediction head output");
    return out;
}

ForecastDistribution CrossViViT::predict(const SampleInput& input) const {
    ForwardOptions opts;
    Tensor out = forward({&input}, opts);
    ForecastDistribution dist;
    dist.steps = cfg_.pred_len;
    dist.quantile_levels = cfg_.multiquantile() ? cfg_.quantiles : std::vector<double>{0.5};
    dist.values.assign(out.value().begin(), out.value().end());
    dist.sort_fan();
    return dist;
}

// ---------------------------------------------------------------------------
// input assembly
// ---------------------------------------------------------------------------

SampleInput assemble_input(const geodata::Sample& sample, const geodata::NormStats& stats,
                           const ModelConfig& cfg, bool zero_context) {
    if (!sample.series) throw ValidationError("assemble_input: sample has no series");
    if (!sample.cube) throw ValidationError("assemble_input: sample has no context cube");
    const geodata::StationSeries& ser = *sample.series;
    const geodata::ContextCube& cube = *sample.cube;
    if (sample.hist_len != cfg.hist_len || sample.pred_len != cfg.pred_len)
        throw ShapeError("assemble_input: window lengths do not match model config");
    if (ser.cols() != cfg.ts_channels)
        throw ShapeError("assemble_input: series has " + std::to_string(ser.cols()) +
                         " channels, model expects " + std::to_string(cfg.ts_channels));
    if (cube.channels != cfg.ctx_channels || cube.height != cfg.grid_h || cube.width != cfg.grid_w)
        throw ShapeError("assemble_input: context cube does not match model config");

    const int T = cfg.hist_len;
    const int ts_in = cfg.ts_input_dim();

    SampleInput out;
    out.series = std::make_shared<std::vector<double>>(static_cast<size_t>(T) * ts_in);
    const double elev_feature = ser.meta.elevation_m * 1e-3;
    for (int t = 0; t < T; ++t) {
        double* row = out.series->data() + static_cast<size_t>(t) * ts_in;
        auto src = ser.row(sample.hist_begin + t);
        for (int c = 0; c < ser.cols(); ++c)
            row[c] = stats.apply(src[c], "ts:" + ser.channel_names[c]);
        const auto tf = embed::cyclical_time(ser.timestamps[sample.hist_begin + t]);
        std::copy(tf.begin(), tf.end(), row + ser.cols());
        row[ser.cols() + 8] = elev_feature;
    }

    // Context frames with normalized data channels plus spatially-broadcast
    // time-feature planes.
    const int Cf = cfg.ctx_feature_channels();
    const int H = cfg.grid_h, W = cfg.grid_w;
    const size_t plane = static_cast<size_t>(H) * W;
    std::vector<double> frames(static_cast<size_t>(T) * Cf * plane);
    for (int t = 0; t < T; ++t) {
        const int src_t = sample.hist_begin + t;
        for (int c = 0; c < cube.channels; ++c) {
            double* dst = frames.data() + (static_cast<size_t>(t) * Cf + c) * plane;
            if (zero_context) {
                std::fill(dst, dst + plane, 0.0);
            } else {
                const auto& m = stats.require("ctx:" + cube.channel_names[c]);
                const float* src =
                    cube.frames.data() + (static_cast<size_t>(src_t) * cube.channels + c) * plane;
                for (size_t i = 0; i < plane; ++i) dst[i] = (src[i] - m.mean) / m.std;
            }
        }
        const auto tf = embed::cyclical_time(cube.timestamps[src_t]);
        for (int f = 0; f < 8; ++f) {
            double* dst = frames.data() + (static_cast<size_t>(t) * Cf + cube.channels + f) * plane;
            std::fill(dst, dst + plane, tf[f]);
        }
    }
    auto grid = embed::extract_patches(frames, T, Cf, H, W, cfg.patch_size);
    out.ctx_patches = std::make_shared<std::vector<double>>(std::move(grid.values));

    // Patch positions: mean cell coordinate of each patch, normalized.
    std::vector<embed::NormCoords> patch_pos;
    patch_pos.reserve(cfg.patches_per_frame());
    const int p = cfg.patch_size;
    for (int py = 0; py < H / p; ++py)
        for (int px = 0; px < W / p; ++px) {
            double lat = 0.0, lon = 0.0;
            for (int i = 0; i < p; ++i) {
                lat += cube.lat_axis[py * p + i];
                lon += cube.lon_axis[px * p + i];
            }
            patch_pos.push_back(embed::normalize_coords(lat / p, lon / p));
        }
    auto phases = embed::rope_phases(patch_pos, cfg.dim_head, cfg.max_freq);
    out.patch_sin = std::make_shared<std::vector<double>>(std::move(phases.sin));
    out.patch_cos = std::make_shared<std::vector<double>>(std::move(phases.cos));

    auto st = embed::rope_phases({embed::normalize_coords(ser.meta.latitude, ser.meta.longitude)},
                                 cfg.dim_head, cfg.max_freq);
    out.station_sin = std::make_shared<std::vector<double>>(std::move(st.sin));
    out.station_cos = std::make_shared<std::vector<double>>(std::move(st.cos));

    if (sample.target_begin() + sample.pred_len <= ser.rows()) {
        out.target.resize(cfg.pred_len);
        const std::string key = "ts:" + ser.channel_names[sample.target_channel];
        for (int t = 0; t < cfg.pred_len; ++t)
            out.target[t] = stats.apply(ser.at(sample.target_begin() + t, sample.target_channel), key);
    }
    return out;
}

// ---------------------------------------------------------------------------
// config serialization
// ---------------------------------------------------------------------------

std::string model_config_to_json(const ModelConfig& cfg) {
    json j;
    j["dim"] = cfg.dim;
    j["depth"] = cfg.depth;
    j["heads"] = cfg.heads;
    j["dim_head"] = cfg.dim_head;
    j["mlp_ratio"] = cfg.mlp_ratio;
    j["dropout"] = cfg.dropout;
    j["use_glu"] = cfg.use_glu;
    j["max_freq"] = cfg.max_freq;
    j["decoder_dim"] = cfg.decoder_dim;
    j["decoder_depth"] = cfg.decoder_depth;
    j["decoder_heads"] = cfg.decoder_heads;
    j["decoder_dim_head"] = cfg.decoder_dim_head;
    j["num_mlp_heads"] = cfg.num_mlp_heads;
    j["quantiles"] = cfg.quantiles;
    j["patch_size"] = cfg.patch_size;
    j["ctx_masking_ratio"] = cfg.ctx_masking_ratio;
    j["ts_masking_ratio"] = cfg.ts_masking_ratio;
    j["hist_len"] = cfg.hist_len;
    j["pred_len"] = cfg.pred_len;
    j["ts_channels"] = cfg.ts_channels;
    j["ctx_channels"] = cfg.ctx_channels;
    j["grid_h"] = cfg.grid_h;
    j["grid_w"] = cfg.grid_w;
    return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
    ModelConfig cfg;
    try {
        json j = json::parse(text);
        cfg.dim = j.at("dim").get<int>();
        cfg.depth = j.at("depth").get<int>();
        cfg.heads = j.at("heads").get<int>();
        cfg.dim_head = j.at("dim_head").get<int>();
        cfg.mlp_ratio = j.at("mlp_ratio").get<int>();
        cfg.dropout = j.at("dropout").get<double>();
        cfg.use_glu = j.at("use_glu").get<bool>();
        cfg.max_freq = j.at("max_freq").get<double>();
        cfg.decoder_dim = j.at("decoder_dim").get<int>();
        cfg.decoder_depth = j.at("decoder_depth").get<int>();
        cfg.decoder_heads = j.at("decoder_heads").get<int>();
        cfg.decoder_dim_head = j.at("decoder_dim_head").get<int>();
        cfg.num_mlp_heads = j.at("num_mlp_heads").get<int>();
        cfg.quantiles = j.at("quantiles").get<std::vector<double>>();
        cfg.patch_size = j.at("patch_size").get<int>();
        cfg.ctx_masking_ratio = j.at("ctx_masking_ratio").get<double>();
        cfg.ts_masking_ratio = j.at("ts_masking_ratio").get<double>();
        cfg.hist_len = j.at("hist_len").get<int>();
        cfg.pred_len = j.at("pred_len").get<int>();
        cfg.ts_channels = j.at("ts_channels").get<int>();
        cfg.ctx_channels = j.at("ctx_channels").get<int>();
        cfg.grid_h = j.at("grid_h").get<int>();
        cfg.grid_w = j.at("grid_w").get<int>();
    } catch (const json::exception& e) {
        throw FormatError("model config JSON: " + std::string(e.what()));
    }
    return cfg;
}

}  // namespace heliocast::nnet
