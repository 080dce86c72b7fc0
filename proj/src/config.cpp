#include "heliocast/config.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace heliocast::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Known keys: leaf sets per section. "*" marks a free-form list/value.
const json& schema() {
    static const json s = {
        {"include", "*"},
        {"model",
         {{"dim", "*"}, {"depth", "*"}, {"heads", "*"}, {"dim_head", "*"}, {"mlp_ratio", "*"},
          {"dropout", "*"}, {"use_glu", "*"}, {"max_freq", "*"}, {"decoder_dim", "*"},
          {"decoder_depth", "*"}, {"decoder_heads", "*"}, {"decoder_dim_head", "*"},
          {"num_mlp_heads", "*"}, {"quantiles", "*"}, {"patch_size", "*"},
          {"ctx_masking_ratio", "*"}, {"ts_masking_ratio", "*"}, {"hist_len", "*"},
          {"pred_len", "*"}}},
        {"train",
         {{"lr_peak", "*"}, {"warmup_epochs", "*"}, {"weight_decay", "*"}, {"batch_size", "*"},
          {"max_epochs", "*"}, {"patience", "*"}, {"seed", "*"}, {"clip_norm", "*"},
          {"strict_deterministic", "*"}, {"stride", "*"}, {"val_stride", "*"}}},
        {"data",
         {{"dir", "*"}, {"train_stations", "*"}, {"val_stations", "*"}, {"test_stations", "*"},
          {"turbidity", "*"}, {"impute", "*"}, {"zero_context", "*"}}},
        {"eval", {{"per_window_mae", "*"}, {"daylight_only", "*"}, {"eval_stride", "*"}}},
        {"synth",
         {{"grid", "*"}, {"days", "*"}, {"stations", "*"}, {"blob_count", "*"},
          {"blob_sigma_min", "*"}, {"blob_sigma_max", "*"}, {"opacity_min", "*"},
          {"opacity_max", "*"}, {"opacity_cap", "*"}, {"wind_x", "*"}, {"wind_y", "*"},
          {"regen_rate", "*"}, {"decay_per_step", "*"}, {"turbidity", "*"}, {"lat_min", "*"},
          {"lat_max", "*"}, {"lon_min", "*"}, {"lon_max", "*"}, {"elevation_base_m", "*"},
          {"elevation_relief_m", "*"}, {"start_year", "*"}, {"start_month", "*"},
          {"start_day", "*"}, {"seed", "*"}}},
    };
    return s;
}

void validate_node(const json& doc, const json& schema_node, const std::string& path) {
    if (!doc.is_object()) return;
    for (auto it = doc.begin(); it != doc.end(); ++it) {
        const std::string key_path = path.empty() ? it.key() : path + "." + it.key();
        if (!schema_node.is_object() || !schema_node.contains(it.key()))
            throw ConfigError("unknown config key: " + key_path);
        const json& child = schema_node.at(it.key());
        if (child.is_object()) validate_node(it.value(), child, key_path);
    }
}

void deep_merge(json& base, const json& overlay) {
    if (!overlay.is_object() || !base.is_object()) {
        base = overlay;
        return;
    }
    for (auto it = overlay.begin(); it != overlay.end(); ++it) {
        if (base.contains(it.key()) && base[it.key()].is_object() && it.value().is_object())
            deep_merge(base[it.key()], it.value());
        else
            base[it.key()] = it.value();
    }
}

json load_file_with_includes(const fs::path& path, std::set<fs::path>& stack) {
    const fs::path canon = fs::weakly_canonical(path);
    if (stack.count(canon)) throw ConfigError("config include cycle at " + canon.string());
    stack.insert(canon);

    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path.string());
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }

    json merged = json::object();
    if (doc.contains("include")) {
        for (const auto& inc : doc["include"]) {
            const fs::path inc_path = path.parent_path() / inc.get<std::string>();
            json base = load_file_with_includes(inc_path, stack);
            deep_merge(merged, base);
        }
        doc.erase("include");
    }
    deep_merge(merged, doc);
    stack.erase(canon);
    return merged;
}

}  // namespace

void validate_against_schema(const json& doc) { validate_node(doc, schema(), ""); }

void apply_override(json& doc, const std::string& spec) {
    const size_t eq = spec.find('=');
    if (eq == std::string::npos)
        throw ConfigError("override must look like section.key=value: " + spec);
    const std::string path = spec.substr(0, eq);
    const std::string value = spec.substr(eq + 1);

    json parsed;
    try {
        parsed = json::parse(value);
    } catch (const json::exception&) {
        parsed = value;  // plain string
    }

    json* node = &doc;
    std::stringstream ss(path);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.')) parts.push_back(part);
    if (parts.empty()) throw ConfigError("empty override path");
    for (size_t i = 0; i + 1 < parts.size(); ++i) {
        if (!node->contains(parts[i])) (*node)[parts[i]] = json::object();
        node = &(*node)[parts[i]];
    }
    (*node)[parts.back()] = parsed;
}

RunConfig RunConfig::load(const std::string& path, const std::vector<std::string>& overrides) {
    std::set<fs::path> stack;
    json doc = load_file_with_includes(path, stack);
    return from_json(std::move(doc), overrides);
}

RunConfig RunConfig::from_json(json doc, const std::vector<std::string>& overrides) {
    for (const auto& ov : overrides) apply_override(doc, ov);
    validate_against_schema(doc);
    RunConfig cfg;
    cfg.doc = std::move(doc);
    return cfg;
}

namespace {

template <typename T>
T get_or(const json& doc, const std::string& section, const std::string& key, T fallback) {
    if (!doc.contains(section) || !doc[section].contains(key)) return fallback;
    try {
        return doc[section][key].get<T>();
    } catch (const json::exception& e) {
        throw ConfigError("config " + section + "." + key + ": " + e.what());
    }
}

}  // namespace

nnet::ModelConfig RunConfig::model_config() const {
    nnet::ModelConfig cfg;  // defaults mirror the large published configuration
    cfg.dim = get_or(doc, "model", "dim", cfg.dim);
    cfg.depth = get_or(doc, "model", "depth", cfg.depth);
    cfg.heads = get_or(doc, "model", "heads", cfg.heads);
    cfg.dim_head = get_or(doc, "model", "dim_head", cfg.dim_head);
    cfg.mlp_ratio = get_or(doc, "model", "mlp_ratio", cfg.mlp_ratio);
    cfg.dropout = get_or(doc, "model", "dropout", cfg.dropout);
    cfg.use_glu = get_or(doc, "model", "use_glu", cfg.use_glu);
    cfg.max_freq = get_or(doc, "model", "max_freq", cfg.max_freq);
    cfg.decoder_dim = get_or(doc, "model", "decoder_dim", cfg.decoder_dim);
    cfg.decoder_depth = get_or(doc, "model", "decoder_depth", cfg.decoder_depth);
    cfg.decoder_heads = get_or(doc, "model", "decoder_heads", cfg.decoder_heads);
    cfg.decoder_dim_head = get_or(doc, "model", "decoder_dim_head", cfg.decoder_dim_head);
    cfg.num_mlp_heads = get_or(doc, "model", "num_mlp_heads", cfg.num_mlp_heads);
    cfg.quantiles = get_or(doc, "model", "quantiles", cfg.quantiles);
    cfg.patch_size = get_or(doc, "model", "patch_size", cfg.patch_size);
    cfg.ctx_masking_ratio = get_or(doc, "model", "ctx_masking_ratio", cfg.ctx_masking_ratio);
    cfg.ts_masking_ratio = get_or(doc, "model", "ts_masking_ratio", cfg.ts_masking_ratio);
    cfg.hist_len = get_or(doc, "model", "hist_len", cfg.hist_len);
    cfg.pred_len = get_or(doc, "model", "pred_len", cfg.pred_len);
    return cfg;
}

train::TrainConfig RunConfig::train_config() const {
    train::TrainConfig cfg;
    cfg.lr_peak = get_or(doc, "train", "lr_peak", cfg.lr_peak);
    cfg.warmup_epochs = get_or(doc, "train", "warmup_epochs", cfg.warmup_epochs);
    cfg.weight_decay = get_or(doc, "train", "weight_decay", cfg.weight_decay);
    cfg.batch_size = get_or(doc, "train", "batch_size", cfg.batch_size);
    cfg.max_epochs = get_or(doc, "train", "max_epochs", cfg.max_epochs);
    cfg.patience = get_or(doc, "train", "patience", cfg.patience);
    cfg.seed = get_or(doc, "train", "seed", cfg.seed);
    cfg.clip_norm = get_or(doc, "train", "clip_norm", cfg.clip_norm);
    cfg.strict_deterministic =
        get_or(doc, "train", "strict_deterministic", cfg.strict_deterministic);
    return cfg;
}

synth::SynthConfig RunConfig::synth_config() const {
    synth::SynthConfig cfg;
    cfg.grid = get_or(doc, "synth", "grid", cfg.grid);
    cfg.days = get_or(doc, "synth", "days", cfg.days);
    if (doc.contains("synth") && doc["synth"].contains("stations")) {
        cfg.stations.clear();
        for (const auto& st : doc["synth"]["stations"]) {
            synth::StationSpec spec;
            spec.name = st.at("name").get<std::string>();
            spec.cell_y = st.at("cell_y").get<int>();
            spec.cell_x = st.at("cell_x").get<int>();
            cfg.stations.push_back(spec);
        }
    }
    cfg.blob_count = get_or(doc, "synth", "blob_count", cfg.blob_count);
    cfg.blob_sigma_min = get_or(doc, "synth", "blob_sigma_min", cfg.blob_sigma_min);
    cfg.blob_sigma_max = get_or(doc, "synth", "blob_sigma_max", cfg.blob_sigma_max);
    cfg.opacity_min = get_or(doc, "synth", "opacity_min", cfg.opacity_min);
    cfg.opacity_max = get_or(doc, "synth", "opacity_max", cfg.opacity_max);
    cfg.opacity_cap = get_or(doc, "synth", "opacity_cap", cfg.opacity_cap);
    cfg.wind_x = get_or(doc, "synth", "wind_x", cfg.wind_x);
    cfg.wind_y = get_or(doc, "synth", "wind_y", cfg.wind_y);
    cfg.regen_rate = get_or(doc, "synth", "regen_rate", cfg.regen_rate);
    cfg.decay_per_step = get_or(doc, "synth", "decay_per_step", cfg.decay_per_step);
    cfg.turbidity = get_or(doc, "synth", "turbidity", cfg.turbidity);
    cfg.lat_min = get_or(doc, "synth", "lat_min", cfg.lat_min);
    cfg.lat_max = get_or(doc, "synth", "lat_max", cfg.lat_max);
    cfg.lon_min = get_or(doc, "synth", "lon_min", cfg.lon_min);
    cfg.lon_max = get_or(doc, "synth", "lon_max", cfg.lon_max);
    cfg.elevation_base_m = get_or(doc, "synth", "elevation_base_m", cfg.elevation_base_m);
    cfg.elevation_relief_m = get_or(doc, "synth", "elevation_relief_m", cfg.elevation_relief_m);
    cfg.start_year = get_or(doc, "synth", "start_year", cfg.start_year);
    cfg.start_month = get_or(doc, "synth", "start_month", cfg.start_month);
    cfg.start_day = get_or(doc, "synth", "start_day", cfg.start_day);
    cfg.seed = get_or<std::uint64_t>(doc, "synth", "seed", cfg.seed);
    return cfg;
}

std::string RunConfig::data_dir() const { return get_or<std::string>(doc, "data", "dir", ""); }

std::vector<std::string> RunConfig::station_list(const std::string& role) const {
    return get_or<std::vector<std::string>>(doc, "data", role + "_stations", {});
}

bool RunConfig::zero_context() const { return get_or(doc, "data", "zero_context", false); }

double RunConfig::turbidity() const { return get_or(doc, "data", "turbidity", 3.0); }

int RunConfig::window_stride(const std::string& role) const {
    if (role == "train") return get_or(doc, "train", "stride", 1);
    if (role == "val") return get_or(doc, "train", "val_stride", 48);
    return get_or(doc, "eval", "eval_stride", 48);
}

std::string RunConfig::impute_policy() const {
    return get_or<std::string>(doc, "data", "impute", "reject");
}

std::uint64_t RunConfig::seed() const { return get_or<std::uint64_t>(doc, "train", "seed", 0); }

bool RunConfig::strict_deterministic() const {
    return get_or(doc, "train", "strict_deterministic", false);
}

bool RunConfig::per_window_mae() const { return get_or(doc, "eval", "per_window_mae", false); }

bool RunConfig::daylight_only() const { return get_or(doc, "eval", "daylight_only", false); }

}  // namespace heliocast::cli
