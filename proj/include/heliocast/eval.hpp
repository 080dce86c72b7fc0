#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "heliocast/geodata.hpp"
#include "heliocast/model.hpp"

namespace heliocast::eval {

// |ln(2/3)|: day pairs with area ratio beyond [2/3, 3/2] are Hard.
inline constexpr double kHardThreshold = 0.40546510810816438;

// Both day areas are floored here (W*h/m^2) before the log ratio so all-dark
// days stay well defined.
inline constexpr double kAreaFloorWh = 1.0;

struct SplitLabel {
    double r = 0.0;
    bool hard = false;
};

// r = |log(area(y) / area(y_prev))| with trapezoidal areas at 30-min steps.
SplitLabel split_label(std::span<const double> y, std::span<const double> y_prev);

std::pair<double, double> metrics(std::span<const double> pred, std::span<const double> target);

// Fraction of timesteps with fan[lo] <= target <= fan[hi]; fan is [T x Q].
double interval_coverage(const std::vector<double>& fan, const std::vector<double>& levels,
                         std::span<const double> target, double lo = 0.02, double hi = 0.98);

std::vector<double> persistence(std::span<const double> history);

// Low-pass reconstruction of the previous day: keeps the DC mode plus the
// k-1 lowest positive frequencies (with conjugate pairs).
std::vector<double> fourier_baseline(std::span<const double> history, int k);

std::vector<double> clear_sky_baseline(const std::vector<geodata::Timestamp>& timestamps,
                                       const geodata::StationMeta& meta, double turbidity = 3.0);

// A forecaster maps a sample to a point prediction (plus an optional fan)
// in physical units (W/m^2).
struct Forecast {
    std::vector<double> point;            // [pred_len]
    std::vector<double> fan;              // [pred_len x Q], optional
    std::vector<double> quantile_levels;  // size Q when fan present
};

using Forecaster = std::function<Forecast(const geodata::Sample&)>;

struct EvalOptions {
    bool per_window_mae = false;  // default pools all timesteps
    bool daylight_only = false;   // keep only zenith < 90 deg timesteps
    double coverage_lo = 0.02;
    double coverage_hi = 0.98;
};

struct SplitMetrics {
    std::string name;
    long long count = 0;  // windows in the split
    std::optional<double> mae;
    std::optional<double> rmse;
    std::optional<double> p_t;
};

struct EvalReport {
    SplitMetrics all, easy, hard;

    std::string to_json() const;
    std::string to_table() const;
    static EvalReport from_json(const std::string& text);
};

EvalReport evaluate(const Forecaster& forecaster, const std::vector<geodata::Sample>& samples,
                    const EvalOptions& opts = {});

// Forecaster adapters.
Forecaster make_baseline_forecaster(const std::string& spec, double turbidity = 3.0);
Forecaster make_model_forecaster(std::shared_ptr<const nnet::CrossViViT> model,
                                 geodata::NormStats stats, bool zero_context = false);

// Per-window forecast rows for CSV dumps: timestamp, target, prediction
// columns (single `pred` or one per quantile level).
struct ForecastDump {
    std::vector<std::string> columns;
    std::vector<std::string> rows;
};
ForecastDump dump_forecasts(const Forecaster& forecaster,
                            const std::vector<geodata::Sample>& samples);

}  // namespace heliocast::eval
