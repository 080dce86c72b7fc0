#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "heliocast/embed.hpp"
#include "heliocast/geodata.hpp"
#include "heliocast/tensor.hpp"

namespace heliocast::nnet {

struct ModelConfig {
    // encoding transformers and cross-attention
    int dim = 384;
    int depth = 16;
    int heads = 12;
    int dim_head = 64;
    int mlp_ratio = 4;
    double dropout = 0.4;
    bool use_glu = true;
    double max_freq = 128.0;

    // decoding transformer
    int decoder_dim = 128;
    int decoder_depth = 4;
    int decoder_heads = 6;
    int decoder_dim_head = 128;

    // prediction heads
    int num_mlp_heads = 1;
    std::vector<double> quantiles = {0.02, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.98};

    // tokenization and masking
    int patch_size = 8;
    double ctx_masking_ratio = 0.99;  // training draws m ~ U(0, this)
    double ts_masking_ratio = 0.0;

    // data geometry
    int hist_len = 48;
    int pred_len = 48;
    int ts_channels = 0;   // raw series channels
    int ctx_channels = 0;  // cube channels as fed to the model
    int grid_h = 64;
    int grid_w = 64;

    int ts_input_dim() const { return ts_channels + 8 + 1; }  // + time features + elevation
    int ctx_feature_channels() const { return ctx_channels + 8; }
    int patch_dim() const { return ctx_feature_channels() * patch_size * patch_size; }
    int patches_per_frame() const { return (grid_h / patch_size) * (grid_w / patch_size); }
    int attn_inner() const { return heads * dim_head; }
    bool multiquantile() const { return num_mlp_heads > 1; }

    void validate() const;
};

// Learnable tensors keyed by layer path; iteration order is the key order,
// which makes initialization and optimizer sweeps deterministic.
class ParamStore {
  public:
    Tensor& create(const std::string& name, std::vector<int> shape);
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    bool contains(const std::string& name) const { return map_.count(name) != 0; }
    std::map<std::string, Tensor>& all() { return map_; }
    const std::map<std::string, Tensor>& all() const { return map_; }
    size_t total_values() const;
    void zero_grad();

  private:
    std::map<std::string, Tensor> map_;
};

// One preassembled sample: normalized channels with time features and
// elevation already concatenated, plus rotary phase tables. Everything is
// constant with respect to the graph.
struct SampleInput {
    std::shared_ptr<std::vector<double>> series;       // [T * ts_input_dim]
    std::shared_ptr<std::vector<double>> ctx_patches;  // [T * N_p * patch_dim]
    std::shared_ptr<std::vector<double>> patch_sin;    // [N_p * dim_head]
    std::shared_ptr<std::vector<double>> patch_cos;
    std::shared_ptr<std::vector<double>> station_sin;  // [dim_head]
    std::shared_ptr<std::vector<double>> station_cos;
    std::vector<double> target;  // [pred_len], normalized; may be empty
};

SampleInput assemble_input(const geodata::Sample& sample, const geodata::NormStats& stats,
                           const ModelConfig& cfg, bool zero_context = false);

// Per-timestep quantile fan (Q columns) or deterministic trace (Q = 1).
struct ForecastDistribution {
    int steps = 0;
    std::vector<double> quantile_levels;  // size Q; {0.5} when deterministic
    std::vector<double> values;           // [steps * Q]

    double at(int t, int q) const { return values[static_cast<size_t>(t) * quantile_levels.size() + q]; }
    // Sorts each timestep's fan so quantiles are non-decreasing.
    void sort_fan();
    bool fan_monotone() const;
    std::vector<double> column(int q) const;
    int level_index(double level, double tol = 1e-9) const;  // -1 if absent
};

struct ForwardOptions {
    bool training = false;
    double ctx_mask_ratio = 0.0;  // resolved ratio for this batch
    double ts_mask_ratio = 0.0;
    std::mt19937_64* rng = nullptr;  // required when training
};

class CrossViViT {
  public:
    CrossViViT(ModelConfig cfg, std::uint64_t seed);
    CrossViViT(ModelConfig cfg, ParamStore params);

    // Returns the prediction tensor [B, pred_len, Q] in normalized units.
    Tensor forward(const std::vector<const SampleInput*>& batch, const ForwardOptions& opts) const;

    // Inference for a single sample: eval mode, no masking, fan sorted.
    ForecastDistribution predict(const SampleInput& input) const;

    const ModelConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    // Number of encoder/mixer/decoder blocks executed by the last forward;
    // exposed for structural tests.
    mutable int blocks_executed = 0;

  private:
    ModelConfig cfg_;
    ParamStore params_;

    void build_params(std::uint64_t seed);

    struct AttnParams;
    Tensor attention(const Tensor& q_tokens, const Tensor& kv_tokens, const std::string& prefix,
                     int n_heads, int d_head,
                     const std::shared_ptr<const std::vector<double>>& q_sin,
                     const std::shared_ptr<const std::vector<double>>& q_cos,
                     const std::shared_ptr<const std::vector<double>>& k_sin,
                     const std::shared_ptr<const std::vector<double>>& k_cos,
                     const ForwardOptions& opts) const;
    Tensor mlp_block(const Tensor& x, const std::string& prefix, const ForwardOptions& opts) const;
};

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

}  // namespace heliocast::nnet
