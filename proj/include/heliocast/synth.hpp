#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "heliocast/geodata.hpp"

namespace heliocast::synth {

struct StationSpec {
    std::string name;
    int cell_y = 0;
    int cell_x = 0;
};

struct SynthConfig {
    int grid = 32;
    int days = 60;
    std::vector<StationSpec> stations;  // default set provided when empty

    // cloud field
    int blob_count = 5;           // initial blobs
    double blob_sigma_min = 2.5;  // cells
    double blob_sigma_max = 6.0;
    double opacity_min = 0.5;     // blob peak amplitude range
    double opacity_max = 1.0;
    double opacity_cap = 0.95;    // field clamp; transmittance floor 1-cap
    double wind_x = 0.25;         // cells per 30-min step
    double wind_y = 0.05;
    double regen_rate = 0.02;     // spawn probability per step
    double decay_per_step = 0.005;  // only applied when regen_rate > 0

    // radiative/site parameters
    double turbidity = 3.0;
    double lat_min = 42.0, lat_max = 50.0;
    double lon_min = 0.0, lon_max = 8.0;
    double elevation_base_m = 300.0;
    double elevation_relief_m = 400.0;

    int start_year = 2021, start_month = 6, start_day = 1;
    std::uint64_t seed = 0;

    void validate() const;
    std::vector<StationSpec> effective_stations() const;
};

struct SynthDataset {
    std::vector<geodata::StationSeries> series;
    geodata::ContextCube cube;  // single channel: cloud opacity
};

// Clear-sky curve times cloud transmittance at each station cell, plus the
// advected opacity field as context. Deterministic per seed.
SynthDataset generate(const SynthConfig& cfg);

struct SplitHistogram {
    int easy = 0;
    int hard = 0;
    int total() const { return easy + hard; }
};

// Day-pair split counts over non-overlapping windows of every series.
SplitHistogram label_audit(const std::vector<geodata::StationSeries>& series_set);

}  // namespace heliocast::synth
