#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "heliocast/errors.hpp"

namespace heliocast::geodata {

// UTC wall-clock timestamp on a 30-minute grid.
struct Timestamp {
    int year = 1970;
    int month = 1;  // 1..12
    int day = 1;    // 1..31
    int hour = 0;   // 0..23
    int minute = 0; // 0..59

    // Minutes since the Unix epoch; valid over the whole Gregorian range.
    std::int64_t epoch_minutes() const;
    bool valid() const;

    std::string iso8601() const;
    static Timestamp parse_iso8601(const std::string& text);
    static Timestamp from_epoch_minutes(std::int64_t minutes);

    friend bool operator==(const Timestamp& a, const Timestamp& b) {
        return a.year == b.year && a.month == b.month && a.day == b.day &&
               a.hour == b.hour && a.minute == b.minute;
    }
    friend bool operator<(const Timestamp& a, const Timestamp& b) {
        return a.epoch_minutes() < b.epoch_minutes();
    }
};

constexpr int kStepMinutes = 30;  // sampling resolution of every series/cube

struct StationMeta {
    std::string name;
    double latitude = 0.0;     // degrees, [-90, 90]
    double longitude = 0.0;    // degrees, [-180, 180]
    double elevation_m = 0.0;  // meters, >= -500

    void validate() const;
};

// Timestamped multichannel measurements at one georeferenced station.
// Values are row-major [T x C]; immutable once loaded.
struct StationSeries {
    StationMeta meta;
    std::vector<Timestamp> timestamps;
    std::vector<std::string> channel_names;
    std::vector<double> values;

    int rows() const { return static_cast<int>(timestamps.size()); }
    int cols() const { return static_cast<int>(channel_names.size()); }
    double at(int t, int c) const { return values[static_cast<size_t>(t) * cols() + c]; }
    std::span<const double> row(int t) const {
        return {values.data() + static_cast<size_t>(t) * cols(), static_cast<size_t>(cols())};
    }
    // -1 if absent.
    int channel_index(const std::string& name) const;
    std::vector<double> channel(const std::string& name) const;
};

// Gridded context frames [T x C x H x W] with per-cell coordinates and elevation.
// Frame data is kept as float32 exactly as stored on disk.
struct ContextCube {
    std::vector<Timestamp> timestamps;
    std::vector<std::string> channel_names;
    int t_total = 0;
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<float> frames;      // [T,C,H,W]
    std::vector<double> lat_axis;   // [H], strictly monotone
    std::vector<double> lon_axis;   // [W], strictly monotone
    std::vector<float> elevation;   // [H,W] meters

    float at(int t, int c, int y, int x) const {
        return frames[((static_cast<size_t>(t) * channels + c) * height + y) * width + x];
    }
    double lat_at(int y) const { return lat_axis[y]; }
    double lon_at(int x) const { return lon_axis[x]; }
    size_t frame_elems() const { return static_cast<size_t>(channels) * height * width; }
    // -1 if absent.
    int channel_index(const std::string& name) const;
};

// One training/eval example: contiguous history + target windows over a
// series (and optionally an aligned cube). Holds shared views, not copies.
struct Sample {
    std::shared_ptr<const StationSeries> series;
    std::shared_ptr<const ContextCube> cube;  // may be null
    int hist_begin = 0;
    int hist_len = 48;
    int pred_len = 48;
    int target_channel = 0;

    int target_begin() const { return hist_begin + hist_len; }
    std::vector<double> target_values() const;          // [pred_len]
    std::vector<double> history_target_channel() const; // [hist_len], same channel as target
    const Timestamp& history_timestamp(int i) const { return series->timestamps[hist_begin + i]; }
    const Timestamp& target_timestamp(int i) const { return series->timestamps[target_begin() + i]; }
};

// Per-channel z-score statistics, fit on training data only.
struct NormStats {
    struct Moments {
        double mean = 0.0;
        double std = 1.0;
    };
    std::map<std::string, Moments> channels;

    const Moments& require(const std::string& name) const;
    double apply(double x, const std::string& name) const;
    double invert(double x, const std::string& name) const;

    std::string to_json() const;
    static NormStats from_json(const std::string& text);
    void save(const std::string& path) const;
    static NormStats load(const std::string& path);
};

enum class GapPolicy {
    Reject,          // default: a missing 30-min stamp is an error
    ClearSkyScaled,  // interpolate clearness linearly, rescale by clear-sky
};

struct LoadOptions {
    GapPolicy gap_policy = GapPolicy::Reject;
};

StationSeries load_station_series(const std::string& path, const LoadOptions& opts = {});
void save_station_series(const StationSeries& series, const std::string& path);

ContextCube load_context_cube(const std::string& dir);
void save_context_cube(const ContextCube& cube, const std::string& dir);

std::vector<Sample> make_windows(std::shared_ptr<const StationSeries> series,
                                 std::shared_ptr<const ContextCube> cube,
                                 int hist_len = 48, int pred_len = 48, int stride = 48);

// Fits z-score moments for every series channel (prefix "ts:") and, when
// cubes are given, every cube channel (prefix "ctx:").
NormStats fit_norm(const std::vector<const StationSeries*>& series_set,
                   const std::vector<const ContextCube*>& cubes = {});

}  // namespace heliocast::geodata
