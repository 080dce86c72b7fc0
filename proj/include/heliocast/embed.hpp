#pragma once

#include <array>
#include <random>
#include <vector>

#include "heliocast/errors.hpp"
#include "heliocast/geodata.hpp"

namespace heliocast::embed {

// (sin, cos) pairs for month/day/hour/minute at their calendar frequencies
// 12/31/24/60; the year is discarded.
using TimeFeatureVector = std::array<double, 8>;

TimeFeatureVector cyclical_time(const geodata::Timestamp& t);

struct NormCoords {
    double x_lat = 0.0;  // in [-1, 1]
    double x_lon = 0.0;
};

// lat <- 2*((lat+90)/180)-1, lon <- 2*((lon+180)/360)-1.
NormCoords normalize_coords(double lat_deg, double lon_deg);

// Per-position rotary sin/cos of width `dim`, built from axial coordinate
// sinusoids: dim/4 scales per axis, linearly spaced 1 .. max_freq/2, each
// value duplicated pairwise.
struct RotaryPhases {
    int dim = 0;
    std::vector<double> sin;  // [N * dim]
    std::vector<double> cos;  // [N * dim]
    int positions() const { return dim == 0 ? 0 : static_cast<int>(sin.size()) / dim; }
};

RotaryPhases rope_phases(const std::vector<NormCoords>& coords, int dim, double max_freq);

// In-place pairwise rotation of one token: x'[2i] = x[2i]*cos - x[2i+1]*sin,
// x'[2i+1] = x[2i+1]*cos + x[2i]*sin. Norm-preserving.
void apply_rotary_token(double* token, const double* sin_row, const double* cos_row, int dim);

// Rotates every row of x [N x dim] with its matching phase row.
std::vector<double> apply_rotary(const std::vector<double>& x, const RotaryPhases& phases);

// Patch extraction: frames [T x C x H x W] -> per-frame patch matrices
// [T x N_p x (C*p*p)] with N_p = (H/p)*(W/p). Patch pixel order is
// channel-major, rows within channel.
struct PatchGrid {
    int frames = 0;
    int patches_per_frame = 0;
    int patch_dim = 0;       // C * p * p
    int patch_rows = 0;      // H / p
    int patch_cols = 0;      // W / p
    std::vector<double> values;  // [T * N_p * patch_dim]
    const double* patch(int t, int p) const {
        return values.data() +
               (static_cast<size_t>(t) * patches_per_frame + p) * patch_dim;
    }
};

PatchGrid extract_patches(const std::vector<double>& frames, int t_total, int channels,
                          int height, int width, int patch);

// Inverse fold of extract_patches (identity projection).
std::vector<double> fold_patches(const PatchGrid& grid, int channels, int height, int width);

// Linear projection of every patch: tokens [T x N_p x dim] with
// token = W^T * patch + b, W is [patch_dim x dim].
std::vector<double> project_patches(const PatchGrid& grid, const std::vector<double>& weight,
                                    const std::vector<double>& bias, int dim);

// Uniformly keeps max(1, floor(N_p*(1-ratio))) indices out of n, sorted
// ascending; draws are without replacement from `rng`.
std::vector<int> mask_keep_indices(int n, double ratio, std::mt19937_64& rng);

}  // namespace heliocast::embed
