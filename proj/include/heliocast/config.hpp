#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "heliocast/errors.hpp"
#include "heliocast/model.hpp"
#include "heliocast/synth.hpp"
#include "heliocast/train.hpp"

namespace heliocast::cli {

// Hierarchical run configuration. Files are JSON documents; a top-level
// "include" list pulls in base files (relative to the including file) which
// are deep-merged first, later keys override earlier ones. Unknown keys are
// rejected against the schema below.
struct RunConfig {
    nlohmann::json doc;

    static RunConfig load(const std::string& path,
                          const std::vector<std::string>& overrides = {});
    static RunConfig from_json(nlohmann::json doc,
                               const std::vector<std::string>& overrides = {});

    nnet::ModelConfig model_config() const;
    train::TrainConfig train_config() const;
    synth::SynthConfig synth_config() const;

    std::string data_dir() const;
    std::vector<std::string> station_list(const std::string& role) const;  // train/val/test
    bool zero_context() const;
    double turbidity() const;
    int window_stride(const std::string& role) const;
    std::string impute_policy() const;
    std::uint64_t seed() const;
    bool strict_deterministic() const;
    bool per_window_mae() const;
    bool daylight_only() const;

    std::string resolved_text() const { return doc.dump(2); }
};

// key=value (dotted path) override, e.g. "model.depth=2" or
// "data.train_stations=[\"STA\"]". Values parse as JSON first, then string.
void apply_override(nlohmann::json& doc, const std::string& spec);

void validate_against_schema(const nlohmann::json& doc);

}  // namespace heliocast::cli
