#pragma once

#include <vector>

#include "heliocast/errors.hpp"
#include "heliocast/geodata.hpp"

namespace heliocast::solarphys {

struct SolarPosition {
    double zenith_deg = 0.0;   // [0, 180]
    double azimuth_deg = 0.0;  // [0, 360), clockwise from north
};

struct ClearSkyTriple {
    double ghi = 0.0;  // W/m^2
    double dni = 0.0;
    double dhi = 0.0;
};

// Dense per-cell displacement in grid cells per frame.
struct FlowField {
    int height = 0;
    int width = 0;
    std::vector<double> u;  // x displacement, [H*W]
    std::vector<double> v;  // y displacement, [H*W]
};

// Low-precision almanac position (declination + equation of time).
// Accuracy contract: zenith within 0.5 degrees over 1950-2050.
SolarPosition solar_position(const geodata::Timestamp& t, double lat_deg, double lon_deg);

// Ineichen clear-sky irradiance with a fixed Linke turbidity.
// All components are zero when the sun is at or below the horizon.
ClearSkyTriple clear_sky(const geodata::Timestamp& t, const geodata::StationMeta& meta,
                         double linke_turbidity = 3.0);

// GHI = DHI + DNI * cos(zenith), clamped at zero past the horizon.
double compose_ghi(double dni, double dhi, double zenith_deg);

struct FlowParams {
    int iterations = 100;
    double regularization = 0.1;  // smoothness weight (alpha^2)
};

// Horn-Schunck variational flow between two frames, periodic boundary.
FlowField optical_flow(const float* prev, const float* next, int height, int width,
                       const FlowParams& params = {});

// Expands C channels into (value, u, v) per channel plus one elevation
// channel broadcast over time: C' = 3*C + 1.
geodata::ContextCube augment_context(const geodata::ContextCube& cube,
                                     const FlowParams& params = {});

}  // namespace heliocast::solarphys
