#include "heliocast/pipeline.hpp"

#include <algorithm>
#include <filesystem>

namespace heliocast::cli {

namespace fs = std::filesystem;

std::shared_ptr<const geodata::StationSeries> LoadedDataset::find(const std::string& name) const {
    for (const auto& s : series)
        if (s->meta.name == name) return s;
    throw ConfigError("station '" + name + "' not present in the dataset");
}

namespace {

geodata::NormStats fit_stats(const LoadedDataset& data,
                             const std::vector<std::string>& stats_stations) {
    std::vector<const geodata::StationSeries*> train_series;
    for (const auto& name : stats_stations) train_series.push_back(data.find(name).get());
    std::vector<const geodata::ContextCube*> cubes;
    if (data.cube) cubes.push_back(data.cube.get());
    return geodata::fit_norm(train_series, cubes);
}

}  // namespace

LoadedDataset load_dataset(const std::string& dir, const std::vector<std::string>& stations,
                           const std::vector<std::string>& stats_stations,
                           geodata::GapPolicy gap_policy, const solarphys::FlowParams& flow) {
    if (stations.empty()) throw ConfigError("load_dataset: no stations requested");
    LoadedDataset out;
    geodata::LoadOptions opts;
    opts.gap_policy = gap_policy;
    for (const auto& name : stations) {
        const fs::path csv = fs::path(dir) / (name + ".csv");
        auto series =
            std::make_shared<geodata::StationSeries>(geodata::load_station_series(csv.string(), opts));
        if (series->meta.name != name)
            throw ValidationError("station file " + csv.string() + " declares name '" +
                                  series->meta.name + "'");
        out.series.push_back(std::move(series));
    }

    const fs::path ctx_dir = fs::path(dir) / "context";
    if (fs::exists(ctx_dir / "manifest.json")) {
        auto raw = geodata::load_context_cube(ctx_dir.string());
        out.cube = std::make_shared<geodata::ContextCube>(solarphys::augment_context(raw, flow));
    }

    out.stats = fit_stats(out, stats_stations.empty() ? stations : stats_stations);
    return out;
}

LoadedDataset wire_dataset(const synth::SynthDataset& data,
                           const std::vector<std::string>& stats_stations,
                           const solarphys::FlowParams& flow) {
    LoadedDataset out;
    for (const auto& ser : data.series)
        out.series.push_back(std::make_shared<geodata::StationSeries>(ser));
    out.cube =
        std::make_shared<geodata::ContextCube>(solarphys::augment_context(data.cube, flow));
    std::vector<std::string> names = stats_stations;
    if (names.empty())
        for (const auto& s : data.series) names.push_back(s.meta.name);
    out.stats = fit_stats(out, names);
    return out;
}

std::vector<geodata::Sample> windows_for(const LoadedDataset& data,
                                         const std::vector<std::string>& stations, int stride,
                                         int hist_len, int pred_len) {
    std::vector<geodata::Sample> out;
    for (const auto& name : stations) {
        auto samples = geodata::make_windows(data.find(name), data.cube, hist_len, pred_len, stride);
        out.insert(out.end(), samples.begin(), samples.end());
    }
    return out;
}

void bind_model_to_data(nnet::ModelConfig& cfg, const LoadedDataset& data) {
    if (data.series.empty()) throw ConfigError("bind_model_to_data: empty dataset");
    cfg.ts_channels = data.series.front()->cols();
    if (!data.cube) throw ConfigError("bind_model_to_data: the model requires a context cube");
    cfg.ctx_channels = data.cube->channels;
    cfg.grid_h = data.cube->height;
    cfg.grid_w = data.cube->width;
    cfg.validate();
}

void write_dataset(const synth::SynthDataset& data, const std::string& dir) {
    fs::create_directories(dir);
    for (const auto& ser : data.series)
        geodata::save_station_series(ser, (fs::path(dir) / (ser.meta.name + ".csv")).string());
    geodata::save_context_cube(data.cube, (fs::path(dir) / "context").string());
}

}  // namespace heliocast::cli
