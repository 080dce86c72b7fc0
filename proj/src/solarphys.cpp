#include "heliocast/solarphys.hpp"

#include <algorithm>
#include <cmath>

namespace heliocast::solarphys {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kDegToRad = kPi / 180.0;
constexpr double kSolarConstant = 1366.1;  // W/m^2

int day_of_year(const geodata::Timestamp& t) {
    static const int cum[12] = {0, 31, 59, 90, 120, 151, 181, 212, 243, 273, 304, 334};
    int doy = cum[t.month - 1] + t.day;
    const bool leap = (t.year % 4 == 0 && t.year % 100 != 0) || t.year % 400 == 0;
    if (leap && t.month > 2) ++doy;
    return doy;
}

// Fourier fits for declination and equation of time (NOAA almanac form).
struct Almanac {
    double declination_rad;
    double eqtime_min;
};

Almanac almanac(const geodata::Timestamp& t) {
    const bool leap = (t.year % 4 == 0 && t.year % 100 != 0) || t.year % 400 == 0;
    const double year_len = leap ? 366.0 : 365.0;
    const double frac_hour = t.hour + t.minute / 60.0;
    const double gamma = 2.0 * kPi / year_len * (day_of_year(t) - 1 + (frac_hour - 12.0) / 24.0);

    Almanac a;
    a.eqtime_min = 229.18 * (0.000075 + 0.001868 * std::cos(gamma) - 0.032077 * std::sin(gamma) -
                             0.014615 * std::cos(2 * gamma) - 0.040849 * std::sin(2 * gamma));
    a.declination_rad = 0.006918 - 0.399912 * std::cos(gamma) + 0.070257 * std::sin(gamma) -
                        0.006758 * std::cos(2 * gamma) + 0.000907 * std::sin(2 * gamma) -
                        0.002697 * std::cos(3 * gamma) + 0.00148 * std::sin(3 * gamma);
    return a;
}

// Kasten-Young (1989) relative airmass; zenith in degrees, below-horizon
// input is the caller's responsibility.
double relative_airmass(double zenith_deg) {
    const double cz = std::cos(zenith_deg * kDegToRad);
    return 1.0 / (cz + 0.50572 * std::pow(96.07995 - zenith_deg, -1.6364));
}

double extraterrestrial(int doy) {
    return kSolarConstant * (1.0 + 0.033 * std::cos(2.0 * kPi * doy / 365.0));
}

}  // namespace

SolarPosition solar_position(const geodata::Timestamp& t, double lat_deg, double lon_deg) {
    const Almanac a = almanac(t);
    const double frac_min = t.hour * 60.0 + t.minute;
    // True solar time in minutes; lon in degrees east, 4 minutes per degree.
    const double tst = frac_min + a.eqtime_min + 4.0 * lon_deg;
    const double hour_angle_rad = (tst / 4.0 - 180.0) * kDegToRad;

    const double lat = lat_deg * kDegToRad;
    const double cos_zen = std::sin(lat) * std::sin(a.declination_rad) +
                           std::cos(lat) * std::cos(a.declination_rad) * std::cos(hour_angle_rad);
    const double zen = std::acos(std::clamp(cos_zen, -1.0, 1.0));

    SolarPosition pos;
    pos.zenith_deg = zen / kDegToRad;

    const double sin_zen = std::sin(zen);
    double az;
    if (sin_zen < 1e-9) {
        az = 0.0;  // sun at zenith/nadir: azimuth undefined
    } else {
        double cos_az = (std::sin(a.declination_rad) - std::sin(lat) * cos_zen) /
                        (std::cos(lat) * sin_zen);
        az = std::acos(std::clamp(cos_az, -1.0, 1.0)) / kDegToRad;
        if (hour_angle_rad > 0) az = 360.0 - az;
    }
    pos.azimuth_deg = az == 360.0 ? 0.0 : az;
    return pos;
}

ClearSkyTriple clear_sky(const geodata::Timestamp& t, const geodata::StationMeta& meta,
                         double linke_turbidity) {
    if (linke_turbidity < 1.0 || linke_turbidity > 10.0)
        throw ParameterError("clear_sky: Linke turbidity must lie in [1, 10]");

    const SolarPosition pos = solar_position(t, meta.latitude, meta.longitude);
    const double cz = std::cos(pos.zenith_deg * kDegToRad);
    if (cz <= 0.0) return {0.0, 0.0, 0.0};

    const double alt = meta.elevation_m;
    const double tl = linke_turbidity;
    const double am = relative_airmass(pos.zenith_deg);
    // Pressure-corrected (absolute) airmass via the standard atmosphere.
    const double pressure_ratio = std::pow(1.0 - 2.25577e-5 * std::min(alt, 40000.0), 5.25588);
    const double am_abs = am * pressure_ratio;

    const double i0 = extraterrestrial(day_of_year(t));
    const double fh1 = std::exp(-alt / 8000.0);
    const double fh2 = std::exp(-alt / 1250.0);
    const double cg1 = 5.09e-5 * alt + 0.868;
    const double cg2 = 3.92e-5 * alt + 0.0387;

    double ghi = cg1 * i0 * cz * std::exp(-cg2 * am_abs * (fh1 + fh2 * (tl - 1.0))) *
                 std::exp(0.01 * std::pow(am_abs, 1.8));
    ghi = std::max(ghi, 0.0);

    const double b = 0.664 + 0.163 / fh1;
    double bn = b * std::exp(-0.09 * am_abs * (tl - 1.0));
    double dni = i0 * std::max(bn, 0.0);
    // Cap the beam so the diffuse residual stays nonnegative.
    const double frac = 1.0 - (0.1 - 0.2 * std::exp(-tl)) / (0.1 + 0.882 / fh1);
    dni = std::min(dni, ghi * std::max(frac, 0.0) / cz);

    ClearSkyTriple out;
    out.ghi = ghi;
    out.dni = dni;
    out.dhi = std::max(ghi - dni * cz, 0.0);
    return out;
}

double compose_ghi(double dni, double dhi, double zenith_deg) {
    if (dni < 0.0 || dhi < 0.0)
        throw ValidationError("compose_ghi: irradiance components must be nonnegative");
    if (zenith_deg < 0.0 || zenith_deg > 180.0)
        throw ValidationError("compose_ghi: zenith out of [0, 180]");
    const double cz = std::cos(zenith_deg * kDegToRad);
    if (cz <= 0.0) return 0.0;
    return dhi + dni * cz;
}

// ---------------------------------------------------------------------------
// Horn-Schunck optical flow, periodic boundary, fixed iteration count.
// ---------------------------------------------------------------------------

FlowField optical_flow(const float* prev, const float* next, int height, int width,
                       const FlowParams& params) {
    if (height <= 0 || width <= 0) throw ValidationError("optical_flow: empty frame");
    const size_t n = static_cast<size_t>(height) * width;
    for (size_t i = 0; i < n; ++i)
        if (!std::isfinite(prev[i]) || !std::isfinite(next[i]))
            throw ValidationError("optical_flow: non-finite frame value");

    auto wrap = [](int i, int m) { return ((i % m) + m) % m; };
    auto at = [&](const float* f, int y, int x) {
        return static_cast<double>(f[static_cast<size_t>(wrap(y, height)) * width + wrap(x, width)]);
    };

    // Central spatial gradients averaged over the two frames, forward temporal.
    std::vector<double> ix(n), iy(n), it(n);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const size_t i = static_cast<size_t>(y) * width + x;
            ix[i] = 0.25 * (at(prev, y, x + 1) - at(prev, y, x - 1) +
                            at(next, y, x + 1) - at(next, y, x - 1));
            iy[i] = 0.25 * (at(prev, y + 1, x) - at(prev, y - 1, x) +
                            at(next, y + 1, x) - at(next, y - 1, x));
            it[i] = at(next, y, x) - at(prev, y, x);
        }
    }

    FlowField flow;
    flow.height = height;
    flow.width = width;
    flow.u.assign(n, 0.0);
    flow.v.assign(n, 0.0);

    const double alpha2 = params.regularization;
    std::vector<double> ubar(n), vbar(n);
    for (int iter = 0; iter < params.iterations; ++iter) {
        auto favg = [&](const std::vector<double>& f, int y, int x) {
            // Horn-Schunck weighted neighborhood average.
            auto g = [&](int yy, int xx) {
                return f[static_cast<size_t>(wrap(yy, height)) * width + wrap(xx, width)];
            };
            return (g(y - 1, x) + g(y + 1, x) + g(y, x - 1) + g(y, x + 1)) / 6.0 +
                   (g(y - 1, x - 1) + g(y - 1, x + 1) + g(y + 1, x - 1) + g(y + 1, x + 1)) / 12.0;
        };
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) {
                const size_t i = static_cast<size_t>(y) * width + x;
                ubar[i] = favg(flow.u, y, x);
                vbar[i] = favg(flow.v, y, x);
            }
        for (size_t i = 0; i < n; ++i) {
            const double denom = alpha2 + ix[i] * ix[i] + iy[i] * iy[i];
            const double common = (ix[i] * ubar[i] + iy[i] * vbar[i] + it[i]) / denom;
            flow.u[i] = ubar[i] - ix[i] * common;
            flow.v[i] = vbar[i] - iy[i] * common;
        }
    }
    return flow;
}

geodata::ContextCube augment_context(const geodata::ContextCube& cube, const FlowParams& params) {
    geodata::ContextCube out;
    out.timestamps = cube.timestamps;
    out.t_total = cube.t_total;
    out.height = cube.height;
    out.width = cube.width;
    out.lat_axis = cube.lat_axis;
    out.lon_axis = cube.lon_axis;
    out.elevation = cube.elevation;
    out.channels = 3 * cube.channels + 1;

    for (const std::string& name : cube.channel_names) {
        out.channel_names.push_back(name);
        out.channel_names.push_back(name + "_u");
        out.channel_names.push_back(name + "_v");
    }
    out.channel_names.push_back("elevation");

    const size_t plane = static_cast<size_t>(cube.height) * cube.width;
    out.frames.assign(static_cast<size_t>(out.t_total) * out.frame_elems(), 0.0f);

#pragma omp parallel for schedule(dynamic)
    for (int t = 0; t < cube.t_total; ++t) {
        for (int c = 0; c < cube.channels; ++c) {
            const float* value = cube.frames.data() +
                                 (static_cast<size_t>(t) * cube.channels + c) * plane;
            FlowField flow;
            if (t == 0) {
                flow.u.assign(plane, 0.0);  // no predecessor frame
                flow.v.assign(plane, 0.0);
            } else {
                const float* before = cube.frames.data() +
                                      (static_cast<size_t>(t - 1) * cube.channels + c) * plane;
                flow = optical_flow(before, value, cube.height, cube.width, params);
            }
            float* dst = out.frames.data() +
                         (static_cast<size_t>(t) * out.channels + 3 * c) * plane;
            std::copy(value, value + plane, dst);
            for (size_t i = 0; i < plane; ++i) dst[plane + i] = static_cast<float>(flow.u[i]);
            for (size_t i = 0; i < plane; ++i) dst[2 * plane + i] = static_cast<float>(flow.v[i]);
        }
        float* elev_dst = out.frames.data() +
                          (static_cast<size_t>(t) * out.channels + (out.channels - 1)) * plane;
        std::copy(cube.elevation.begin(), cube.elevation.end(), elev_dst);
    }
    return out;
}

}  // namespace heliocast::solarphys
