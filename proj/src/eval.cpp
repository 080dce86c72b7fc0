#include "heliocast/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "heliocast/solarphys.hpp"

namespace heliocast::eval {

using nlohmann::json;

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kStepHours = 0.5;
}  // namespace

SplitLabel split_label(std::span<const double> y, std::span<const double> y_prev) {
    if (y.size() != y_prev.size()) throw ShapeError("split_label: window lengths differ");
    if (y.size() < 2) throw ShapeError("split_label: windows too short");

    auto area = [](std::span<const double> day) {
        double a = 0.0;
        for (size_t i = 1; i < day.size(); ++i) a += 0.5 * (day[i] + day[i - 1]) * kStepHours;
        return std::max(a, kAreaFloorWh);
    };

    SplitLabel out;
    out.r = std::abs(std::log(area(y) / area(y_prev)));
    out.hard = !(out.r < kHardThreshold);
    return out;
}

std::pair<double, double> metrics(std::span<const double> pred, std::span<const double> target) {
    if (pred.size() != target.size()) throw ShapeError("metrics: length mismatch");
    if (pred.empty()) throw ShapeError("metrics: empty input");
    double abs_sum = 0.0, sq_sum = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) {
        const double e = pred[i] - target[i];
        if (!std::isfinite(e)) throw ValidationError("metrics: non-finite error");
        abs_sum += std::abs(e);
        sq_sum += e * e;
    }
    const double n = static_cast<double>(pred.size());
    return {abs_sum / n, std::sqrt(sq_sum / n)};
}

double interval_coverage(const std::vector<double>& fan, const std::vector<double>& levels,
                         std::span<const double> target, double lo, double hi) {
    const size_t Q = levels.size();
    if (Q == 0 || fan.size() != target.size() * Q)
        throw ShapeError("interval_coverage: fan is not [T x Q]");
    int lo_idx = -1, hi_idx = -1;
    for (size_t i = 0; i < Q; ++i) {
        if (std::abs(levels[i] - lo) < 1e-9) lo_idx = static_cast<int>(i);
        if (std::abs(levels[i] - hi) < 1e-9) hi_idx = static_cast<int>(i);
    }
    if (lo_idx < 0 || hi_idx < 0)
        throw ParameterError("interval_coverage: requested quantile levels not in the fan");

    size_t inside = 0;
    for (size_t t = 0; t < target.size(); ++t) {
        const double a = fan[t * Q + lo_idx];
        const double b = fan[t * Q + hi_idx];
        if (a <= target[t] && target[t] <= b) ++inside;
    }
    return static_cast<double>(inside) / static_cast<double>(target.size());
}

std::vector<double> persistence(std::span<const double> history) {
    return {history.begin(), history.end()};
}

std::vector<double> fourier_baseline(std::span<const double> history, int k) {
    const int n = static_cast<int>(history.size());
    if (k < 1) throw ParameterError("fourier_baseline: k must be >= 1");
    if (k > n / 2) throw ParameterError("fourier_baseline: k exceeds representable modes");

    // Direct DFT; n = 48 keeps this trivial.
    std::vector<double> re(n, 0.0), im(n, 0.0);
    for (int f = 0; f < n; ++f) {
        for (int t = 0; t < n; ++t) {
            const double ang = -2.0 * kPi * f * t / n;
            re[f] += history[t] * std::cos(ang);
            im[f] += history[t] * std::sin(ang);
        }
    }

    auto keep = [&](int f) {
        if (f == 0) return true;
        const int pos = std::min(f, n - f);  // conjugate-symmetric partner
        return pos <= k - 1;
    };

    std::vector<double> out(n, 0.0);
    for (int t = 0; t < n; ++t) {
        double acc = 0.0;
        for (int f = 0; f < n; ++f) {
            if (!keep(f)) continue;
            const double ang = 2.0 * kPi * f * t / n;
            acc += re[f] * std::cos(ang) - im[f] * std::sin(ang);
        }
        out[t] = acc / n;
    }
    return out;
}

std::vector<double> clear_sky_baseline(const std::vector<geodata::Timestamp>& timestamps,
                                       const geodata::StationMeta& meta, double turbidity) {
    std::vector<double> out;
    out.reserve(timestamps.size());
    for (const auto& t : timestamps) out.push_back(solarphys::clear_sky(t, meta, turbidity).ghi);
    return out;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

namespace {

struct Accumulator {
    long long windows = 0;
    double abs_sum = 0.0, sq_sum = 0.0;
    long long steps = 0;
    double window_mae_sum = 0.0;  // for the per-window aggregation option
    double inside = 0.0;
    long long coverage_steps = 0;
    bool any_fan = false;

    void add_window(std::span<const double> pred, std::span<const double> target,
                    const std::vector<char>& keep) {
        ++windows;
        double wa = 0.0;
        long long wn = 0;
        for (size_t i = 0; i < pred.size(); ++i) {
            if (!keep[i]) continue;
            const double e = pred[i] - target[i];
            abs_sum += std::abs(e);
            sq_sum += e * e;
            wa += std::abs(e);
            ++wn;
        }
        steps += wn;
        if (wn > 0) window_mae_sum += wa / static_cast<double>(wn);
    }
};

SplitMetrics finalize(const std::string& name, const Accumulator& acc, bool per_window) {
    SplitMetrics m;
    m.name = name;
    m.count = acc.windows;
    if (acc.windows == 0 || acc.steps == 0) return m;  // metrics omitted
    m.mae = per_window ? acc.window_mae_sum / static_cast<double>(acc.windows)
                       : acc.abs_sum / static_cast<double>(acc.steps);
    m.rmse = std::sqrt(acc.sq_sum / static_cast<double>(acc.steps));
    if (acc.any_fan && acc.coverage_steps > 0)
        m.p_t = acc.inside / static_cast<double>(acc.coverage_steps);
    return m;
}

}  // namespace

EvalReport evaluate(const Forecaster& forecaster, const std::vector<geodata::Sample>& samples,
                    const EvalOptions& opts) {
    Accumulator acc_all, acc_easy, acc_hard;

    for (const auto& sample : samples) {
        const std::vector<double> target = sample.target_values();
        const std::vector<double> prev = sample.history_target_channel();
        // Split membership comes from ground truth only.
        const SplitLabel label =
            split_label(std::span<const double>(target), std::span<const double>(prev));

        Forecast fc = forecaster(sample);
        if (static_cast<int>(fc.point.size()) != sample.pred_len)
            throw ShapeError("evaluate: forecaster returned wrong horizon length");

        std::vector<char> keep(target.size(), 1);
        if (opts.daylight_only) {
            for (size_t i = 0; i < target.size(); ++i) {
                const auto pos = solarphys::solar_position(sample.target_timestamp(static_cast<int>(i)),
                                                           sample.series->meta.latitude,
                                                           sample.series->meta.longitude);
                keep[i] = pos.zenith_deg < 90.0 ? 1 : 0;
            }
        }

        auto add_to = [&](Accumulator& acc) {
            acc.add_window(fc.point, target, keep);
            if (!fc.fan.empty()) {
                acc.any_fan = true;
                const size_t Q = fc.quantile_levels.size();
                int lo_idx = -1, hi_idx = -1;
                for (size_t i = 0; i < Q; ++i) {
                    if (std::abs(fc.quantile_levels[i] - opts.coverage_lo) < 1e-9)
                        lo_idx = static_cast<int>(i);
                    if (std::abs(fc.quantile_levels[i] - opts.coverage_hi) < 1e-9)
                        hi_idx = static_cast<int>(i);
                }
                if (lo_idx < 0 || hi_idx < 0)
                    throw ParameterError("evaluate: coverage quantiles missing from fan");
                for (size_t t = 0; t < target.size(); ++t) {
                    if (!keep[t]) continue;
                    if (fc.fan[t * Q + lo_idx] <= target[t] && target[t] <= fc.fan[t * Q + hi_idx])
                        acc.inside += 1.0;
                    ++acc.coverage_steps;
                }
            }
        };
        add_to(acc_all);
        add_to(label.hard ? acc_hard : acc_easy);
    }

    EvalReport report;
    report.all = finalize("All", acc_all, opts.per_window_mae);
    report.easy = finalize("Easy", acc_easy, opts.per_window_mae);
    report.hard = finalize("Hard", acc_hard, opts.per_window_mae);

    if (report.all.count != report.easy.count + report.hard.count)
        throw Error("evaluate: split counts do not partition the dataset");
    for (const auto* s : {&report.all, &report.easy, &report.hard})
        if (s->mae && s->rmse && *s->mae > *s->rmse + 1e-9)
            throw Error("evaluate: MAE exceeded RMSE in split " + s->name);
    return report;
}

// ---------------------------------------------------------------------------
// report serialization
// ---------------------------------------------------------------------------

namespace {

json split_to_json(const SplitMetrics& m) {
    json j;
    j["count"] = m.count;
    if (m.mae) j["mae"] = *m.mae;
    if (m.rmse) j["rmse"] = *m.rmse;
    if (m.p_t) j["p_t"] = *m.p_t;
    return j;
}

SplitMetrics split_from_json(const std::string& name, const json& j) {
    SplitMetrics m;
    m.name = name;
    m.count = j.at("count").get<long long>();
    if (j.contains("mae")) m.mae = j["mae"].get<double>();
    if (j.contains("rmse")) m.rmse = j["rmse"].get<double>();
    if (j.contains("p_t")) m.p_t = j["p_t"].get<double>();
    return m;
}

}  // namespace

std::string EvalReport::to_json() const {
    json j;
    j["All"] = split_to_json(all);
    j["Easy"] = split_to_json(easy);
    j["Hard"] = split_to_json(hard);
    return j.dump(2);
}

EvalReport EvalReport::from_json(const std::string& text) {
    EvalReport r;
    try {
        json j = json::parse(text);
        r.all = split_from_json("All", j.at("All"));
        r.easy = split_from_json("Easy", j.at("Easy"));
        r.hard = split_from_json("Hard", j.at("Hard"));
    } catch (const json::exception& e) {
        throw FormatError("eval report JSON: " + std::string(e.what()));
    }
    return r;
}

std::string EvalReport::to_table() const {
    auto fmt = [](const std::optional<double>& v) {
        if (!v) return std::string("-");
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.2f", *v);
        return std::string(buf);
    };
    auto fmt_p = [](const std::optional<double>& v) {
        if (!v) return std::string("-");
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.3f", *v);
        return std::string(buf);
    };
    std::ostringstream out;
    char line[128];
    std::snprintf(line, sizeof(line), "%-6s %8s %10s %10s %8s\n", "Split", "Count", "MAE", "RMSE",
                  "p_t");
    out << line;
    for (const auto* s : {&all, &easy, &hard}) {
        std::snprintf(line, sizeof(line), "%-6s %8lld %10s %10s %8s\n", s->name.c_str(), s->count,
                      fmt(s->mae).c_str(), fmt(s->rmse).c_str(), fmt_p(s->p_t).c_str());
        out << line;
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// forecaster adapters
// ---------------------------------------------------------------------------

Forecaster make_baseline_forecaster(const std::string& spec, double turbidity) {
    if (spec == "persistence") {
        return [](const geodata::Sample& s) {
            Forecast fc;
            fc.point = persistence(s.history_target_channel());
            return fc;
        };
    }
    if (spec == "clearsky" || spec == "clear-sky") {
        return [turbidity](const geodata::Sample& s) {
            std::vector<geodata::Timestamp> stamps;
            for (int i = 0; i < s.pred_len; ++i) stamps.push_back(s.target_timestamp(i));
            Forecast fc;
            fc.point = clear_sky_baseline(stamps, s.series->meta, turbidity);
            return fc;
        };
    }
    if (spec.rfind("fourier:", 0) == 0) {
        const int k = std::stoi(spec.substr(8));
        return [k](const geodata::Sample& s) {
            Forecast fc;
            fc.point = fourier_baseline(s.history_target_channel(), k);
            return fc;
        };
    }
    throw ConfigError("unknown baseline '" + spec +
                      "' (expected persistence, clearsky, or fourier:<k>)");
}

Forecaster make_model_forecaster(std::shared_ptr<const nnet::CrossViViT> model,
                                 geodata::NormStats stats, bool zero_context) {
    return [model, stats = std::move(stats), zero_context](const geodata::Sample& s) {
        const auto input = nnet::assemble_input(s, stats, model->config(), zero_context);
        nnet::ForecastDistribution dist = model->predict(input);

        const std::string key = "ts:" + s.series->channel_names[s.target_channel];
        Forecast fc;
        const int Q = static_cast<int>(dist.quantile_levels.size());
        if (Q > 1) {
            fc.quantile_levels = dist.quantile_levels;
            fc.fan.resize(dist.values.size());
            for (size_t i = 0; i < dist.values.size(); ++i)
                fc.fan[i] = stats.invert(dist.values[i], key);
            const int med = dist.level_index(0.5);
            const int col = med >= 0 ? med : Q / 2;
            fc.point.resize(dist.steps);
            for (int t = 0; t < dist.steps; ++t) fc.point[t] = fc.fan[t * Q + col];
        } else {
            fc.point.resize(dist.steps);
            for (int t = 0; t < dist.steps; ++t) fc.point[t] = stats.invert(dist.at(t, 0), key);
        }
        return fc;
    };
}

ForecastDump dump_forecasts(const Forecaster& forecaster,
                            const std::vector<geodata::Sample>& samples) {
    ForecastDump dump;
    bool columns_set = false;
    char buf[64];
    for (const auto& s : samples) {
        Forecast fc = forecaster(s);
        const auto target = s.target_values();
        if (!columns_set) {
            dump.columns = {"timestamp", "target"};
            if (!fc.fan.empty()) {
                for (double q : fc.quantile_levels) {
                    std::snprintf(buf, sizeof(buf), "q%02d", static_cast<int>(std::lround(q * 100)));
                    dump.columns.emplace_back(buf);
                }
            } else {
                dump.columns.emplace_back("pred");
            }
            columns_set = true;
        }
        const size_t Q = fc.quantile_levels.size();
        for (int t = 0; t < s.pred_len; ++t) {
            std::string row = s.target_timestamp(t).iso8601();
            std::snprintf(buf, sizeof(buf), ",%.6g", target[t]);
            row += buf;
            if (!fc.fan.empty()) {
                for (size_t q = 0; q < Q; ++q) {
                    std::snprintf(buf, sizeof(buf), ",%.6g", fc.fan[t * Q + q]);
                    row += buf;
                }
            } else {
                std::snprintf(buf, sizeof(buf), ",%.6g", fc.point[t]);
                row += buf;
            }
            dump.rows.push_back(std::move(row));
        }
    }
    return dump;
}

}  // namespace heliocast::eval
