#pragma once

#include <memory>
#include <string>
#include <vector>

#include "heliocast/geodata.hpp"
#include "heliocast/model.hpp"
#include "heliocast/solarphys.hpp"
#include "heliocast/synth.hpp"

namespace heliocast::cli {

// Dataset directory contents wired for the model: loaded station series,
// the flow/elevation-augmented context cube, and z-score stats fit on the
// named training stations.
struct LoadedDataset {
    std::vector<std::shared_ptr<const geodata::StationSeries>> series;
    std::shared_ptr<const geodata::ContextCube> cube;
    geodata::NormStats stats;

    std::shared_ptr<const geodata::StationSeries> find(const std::string& name) const;
};

LoadedDataset load_dataset(const std::string& dir, const std::vector<std::string>& stations,
                           const std::vector<std::string>& stats_stations,
                           geodata::GapPolicy gap_policy = geodata::GapPolicy::Reject,
                           const solarphys::FlowParams& flow = {});

// In-memory variant used by tests: augments and fits stats without disk IO.
LoadedDataset wire_dataset(const synth::SynthDataset& data,
                           const std::vector<std::string>& stats_stations,
                           const solarphys::FlowParams& flow = {});

std::vector<geodata::Sample> windows_for(const LoadedDataset& data,
                                         const std::vector<std::string>& stations, int stride,
                                         int hist_len = 48, int pred_len = 48);

// Completes the data-geometry fields of a model config from the dataset.
void bind_model_to_data(nnet::ModelConfig& cfg, const LoadedDataset& data);

// Writes a synthetic dataset in the on-disk container formats.
void write_dataset(const synth::SynthDataset& data, const std::string& dir);

}  // namespace heliocast::cli
