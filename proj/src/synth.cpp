#include "heliocast/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "heliocast/eval.hpp"
#include "heliocast/solarphys.hpp"

namespace heliocast::synth {

using geodata::ContextCube;
using geodata::StationMeta;
using geodata::StationSeries;
using geodata::Timestamp;

void SynthConfig::validate() const {
    if (grid < 8) throw ConfigError("synth: grid must be at least 8");
    if (days < 2) throw ConfigError("synth: need at least 2 days");
    if (opacity_min < 0.0 || opacity_max > 1.0 || opacity_min > opacity_max)
        throw ConfigError("synth: blob opacity range must lie in [0, 1]");
    if (opacity_cap <= 0.0 || opacity_cap > 1.0)
        throw ConfigError("synth: opacity cap must lie in (0, 1]");
    const double wind_mag = std::sqrt(wind_x * wind_x + wind_y * wind_y);
    if (wind_mag >= grid / 8.0)
        throw ConfigError("synth: wind magnitude must stay below grid/8 cells per step");
    if (blob_sigma_min <= 0.0 || blob_sigma_max < blob_sigma_min)
        throw ConfigError("synth: bad blob sigma range");
    if (regen_rate < 0.0 || regen_rate > 1.0)
        throw ConfigError("synth: regen_rate must lie in [0, 1]");
    for (const auto& st : effective_stations()) {
        if (st.cell_y < 0 || st.cell_y >= grid || st.cell_x < 0 || st.cell_x >= grid)
            throw ConfigError("synth: station '" + st.name + "' lies off the grid");
    }
}

std::vector<StationSpec> SynthConfig::effective_stations() const {
    if (!stations.empty()) return stations;
    const int q = grid / 4;
    return {{"STA", q, q}, {"STB", q, 3 * q}, {"STC", 3 * q, q}, {"STD", 3 * q, 3 * q}};
}

namespace {

// Periodic bilinear translation; exact mass conservation for constant shifts.
void shift_field(std::vector<double>& field, int n, double dx, double dy,
                 std::vector<double>& scratch) {
    scratch.assign(field.size(), 0.0);
    const auto wrap = [n](int i) { return ((i % n) + n) % n; };
    // Gather: out(y, x) = in(y - dy, x - dx) with bilinear weights.
    double iy_f = std::floor(dy), ix_f = std::floor(dx);
    const double fy = dy - iy_f, fx = dx - ix_f;
    const int oy = static_cast<int>(iy_f), ox = static_cast<int>(ix_f);
    for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
            const int y0 = wrap(y - oy - 1), y1 = wrap(y - oy);
            const int x0 = wrap(x - ox - 1), x1 = wrap(x - ox);
            // in(y - dy) = (1-fy)*in(y1? ...): derive via y - dy = (y - oy) - fy
            const double v00 = field[static_cast<size_t>(y1) * n + x1];
            const double v01 = field[static_cast<size_t>(y1) * n + x0];
            const double v10 = field[static_cast<size_t>(y0) * n + x1];
            const double v11 = field[static_cast<size_t>(y0) * n + x0];
            scratch[static_cast<size_t>(y) * n + x] = (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) +
                                                      fy * ((1.0 - fx) * v10 + fx * v11);
        }
    }
    field.swap(scratch);
}

void splat_blob(std::vector<double>& field, int n, double cy, double cx, double sigma,
                double amplitude) {
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    const auto wrap = [n](int i) { return ((i % n) + n) % n; };
    for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx) {
            const double r2 = dy * dy + dx * dx;
            const double v = amplitude * std::exp(-r2 / (2.0 * sigma * sigma));
            const int y = wrap(static_cast<int>(std::lround(cy)) + dy);
            const int x = wrap(static_cast<int>(std::lround(cx)) + dx);
            field[static_cast<size_t>(y) * n + x] += v;
        }
}

}  // namespace

SynthDataset generate(const SynthConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);

    const int n = cfg.grid;
    const int steps = cfg.days * 48;
    const auto stations = cfg.effective_stations();

    // Coordinate axes; row 0 is the southern edge.
    std::vector<double> lat_axis(n), lon_axis(n);
    for (int i = 0; i < n; ++i) {
        lat_axis[i] = cfg.lat_min + (cfg.lat_max - cfg.lat_min) * (i + 0.5) / n;
        lon_axis[i] = cfg.lon_min + (cfg.lon_max - cfg.lon_min) * (i + 0.5) / n;
    }

    // Gentle seeded terrain so the elevation channel is informative.
    std::vector<float> elevation(static_cast<size_t>(n) * n);
    {
        std::uniform_real_distribution<double> uni(0.0, 2.0 * 3.14159265358979323846);
        const double p1 = uni(rng), p2 = uni(rng);
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) {
                const double u = 2.0 * 3.14159265358979323846 * x / n;
                const double v = 2.0 * 3.14159265358979323846 * y / n;
                elevation[static_cast<size_t>(y) * n + x] = static_cast<float>(
                    cfg.elevation_base_m +
                    cfg.elevation_relief_m * 0.5 *
                        (std::sin(u + p1) * std::cos(v + p2) + std::sin(2 * v + p2) * 0.5 + 0.75));
            }
    }

    // Initial cloud field.
    std::vector<double> field(static_cast<size_t>(n) * n, 0.0);
    {
        std::uniform_real_distribution<double> pos(0.0, n);
        std::uniform_real_distribution<double> sig(cfg.blob_sigma_min, cfg.blob_sigma_max);
        std::uniform_real_distribution<double> amp(cfg.opacity_min, cfg.opacity_max);
        for (int i = 0; i < cfg.blob_count; ++i)
            splat_blob(field, n, pos(rng), pos(rng), sig(rng), amp(rng));
    }

    const Timestamp start{cfg.start_year, cfg.start_month, cfg.start_day, 0, 0};
    const std::int64_t start_min = start.epoch_minutes();

    ContextCube cube;
    cube.t_total = steps;
    cube.channels = 1;
    cube.height = n;
    cube.width = n;
    cube.channel_names = {"opacity"};
    cube.lat_axis = lat_axis;
    cube.lon_axis = lon_axis;
    cube.elevation = elevation;
    cube.frames.resize(static_cast<size_t>(steps) * n * n);
    cube.timestamps.reserve(steps);

    std::vector<std::vector<double>> opacity_at(stations.size());
    for (auto& v : opacity_at) v.reserve(steps);

    std::vector<double> scratch;
    std::uniform_real_distribution<double> uni01(0.0, 1.0);
    std::uniform_real_distribution<double> pos(0.0, n);
    std::uniform_real_distribution<double> sig(cfg.blob_sigma_min, cfg.blob_sigma_max);
    std::uniform_real_distribution<double> amp(cfg.opacity_min, cfg.opacity_max);

    for (int t = 0; t < steps; ++t) {
        cube.timestamps.push_back(Timestamp::from_epoch_minutes(start_min + 30LL * t));
        if (t > 0) {
            shift_field(field, n, cfg.wind_x, cfg.wind_y, scratch);
            if (cfg.regen_rate > 0.0) {
                for (double& v : field) v *= 1.0 - cfg.decay_per_step;
                if (uni01(rng) < cfg.regen_rate)
                    splat_blob(field, n, pos(rng), pos(rng), sig(rng), amp(rng));
            }
        }
        float* frame = cube.frames.data() + static_cast<size_t>(t) * n * n;
        for (size_t i = 0; i < field.size(); ++i)
            frame[i] = static_cast<float>(std::clamp(field[i], 0.0, cfg.opacity_cap));
        for (size_t s = 0; s < stations.size(); ++s)
            opacity_at[s].push_back(static_cast<double>(
                frame[static_cast<size_t>(stations[s].cell_y) * n + stations[s].cell_x]));
    }

    // Station series: clear sky modulated by the local cloud transmittance.
    SynthDataset out;
    std::normal_distribution<double> noise(0.0, 1.0);
    for (size_t s = 0; s < stations.size(); ++s) {
        StationSeries ser;
        ser.meta.name = stations[s].name;
        ser.meta.latitude = lat_axis[stations[s].cell_y];
        ser.meta.longitude = lon_axis[stations[s].cell_x];
        ser.meta.elevation_m = static_cast<double>(
            elevation[static_cast<size_t>(stations[s].cell_y) * n + stations[s].cell_x]);
        ser.channel_names = {"ghi", "dni", "dhi", "pressure", "cs_ghi",
                             "cs_dni", "cs_dhi", "kt", "temp", "rh"};
        ser.timestamps = cube.timestamps;
        ser.values.resize(static_cast<size_t>(steps) * ser.channel_names.size());

        const double pressure_hpa =
            1013.25 * std::pow(1.0 - 2.25577e-5 * ser.meta.elevation_m, 5.25588);
        // Independent noise stream per station keeps the generator stable
        // under station-list edits.
        std::mt19937_64 noise_rng(cfg.seed ^ (0x9e3779b97f4a7c15ULL * (s + 1)));

        for (int t = 0; t < steps; ++t) {
            const auto cs = solarphys::clear_sky(ser.timestamps[t], ser.meta, cfg.turbidity);
            const double tau = 1.0 - opacity_at[s][t];
            const double ghi = cs.ghi * tau;
            const double dni = cs.dni * tau;
            const double dhi = cs.dhi * tau;

            const double hour = ser.timestamps[t].hour + ser.timestamps[t].minute / 60.0;
            const double diurnal = std::sin((hour - 6.0) / 24.0 * 2.0 * 3.14159265358979323846);
            const double temp = 12.0 + 8.0 * diurnal * tau + 0.3 * noise(noise_rng);
            const double rh = std::clamp(0.6 - 0.25 * diurnal + 0.02 * noise(noise_rng), 0.0, 1.0);

            double* row = ser.values.data() + static_cast<size_t>(t) * ser.channel_names.size();
            row[0] = ghi;
            row[1] = dni;
            row[2] = dhi;
            row[3] = pressure_hpa + 0.05 * noise(noise_rng);
            row[4] = cs.ghi;
            row[5] = cs.dni;
            row[6] = cs.dhi;
            row[7] = cs.ghi > 1.0 ? ghi / cs.ghi : 0.0;  // clearness index
            row[8] = temp;
            row[9] = rh;
        }
        out.series.push_back(std::move(ser));
    }
    out.cube = std::move(cube);
    return out;
}

SplitHistogram label_audit(const std::vector<StationSeries>& series_set) {
    SplitHistogram hist;
    for (const auto& ser : series_set) {
        auto samples = geodata::make_windows(
            std::make_shared<StationSeries>(ser), nullptr, 48, 48, 48);
        for (const auto& sample : samples) {
            const auto target = sample.target_values();
            const auto prev = sample.history_target_channel();
            const auto label = eval::split_label(std::span<const double>(target),
                                                 std::span<const double>(prev));
            if (label.hard)
                ++hist.hard;
            else
                ++hist.easy;
        }
    }
    return hist;
}

}  // namespace heliocast::synth
