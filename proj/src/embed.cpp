#include "heliocast/embed.hpp"

#include <algorithm>
#include <cmath>

namespace heliocast::embed {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

TimeFeatureVector cyclical_time(const geodata::Timestamp& t) {
    auto pair = [](double x, double omega) {
        const double phase = 2.0 * kPi * x / omega;
        return std::array<double, 2>{std::sin(phase), std::cos(phase)};
    };
    const auto m = pair(t.month, 12.0);
    const auto d = pair(t.day, 31.0);
    const auto h = pair(t.hour, 24.0);
    const auto mi = pair(t.minute, 60.0);
    return {m[0], m[1], d[0], d[1], h[0], h[1], mi[0], mi[1]};
}

NormCoords normalize_coords(double lat_deg, double lon_deg) {
    if (lat_deg < -90.0 || lat_deg > 90.0)
        throw ValidationError("normalize_coords: latitude out of [-90, 90]");
    if (lon_deg < -180.0 || lon_deg > 180.0)
        throw ValidationError("normalize_coords: longitude out of [-180, 180]");
    NormCoords c;
    c.x_lat = 2.0 * ((lat_deg + 90.0) / 180.0) - 1.0;
    c.x_lon = 2.0 * ((lon_deg + 180.0) / 360.0) - 1.0;
    return c;
}

RotaryPhases rope_phases(const std::vector<NormCoords>& coords, int dim, double max_freq) {
    if (dim <= 0 || dim % 4 != 0)
        throw ParameterError("rope_phases: dim must be a positive multiple of 4");

    const int n_scales = dim / 4;
    std::vector<double> scales(n_scales);
    for (int i = 0; i < n_scales; ++i) {
        scales[i] = n_scales == 1
                        ? 1.0
                        : 1.0 + (max_freq / 2.0 - 1.0) * static_cast<double>(i) / (n_scales - 1);
    }

    RotaryPhases out;
    out.dim = dim;
    const size_t n = coords.size();
    out.sin.resize(n * dim);
    out.cos.resize(n * dim);

    // Layout per position: x-axis phases then y-axis phases, each scale
    // duplicated pairwise so adjacent lanes rotate together.
    for (size_t p = 0; p < n; ++p) {
        double* srow = out.sin.data() + p * dim;
        double* crow = out.cos.data() + p * dim;
        for (int i = 0; i < n_scales; ++i) {
            const double px = coords[p].x_lon * scales[i] * kPi;
            const double py = coords[p].x_lat * scales[i] * kPi;
            const double sx = std::sin(px), cx = std::cos(px);
            const double sy = std::sin(py), cy = std::cos(py);
            srow[2 * i] = sx;
            srow[2 * i + 1] = sx;
            crow[2 * i] = cx;
            crow[2 * i + 1] = cx;
            srow[dim / 2 + 2 * i] = sy;
            srow[dim / 2 + 2 * i + 1] = sy;
            crow[dim / 2 + 2 * i] = cy;
            crow[dim / 2 + 2 * i + 1] = cy;
        }
    }
    return out;
}

void apply_rotary_token(double* token, const double* sin_row, const double* cos_row, int dim) {
    for (int i = 0; i < dim; i += 2) {
        const double a = token[i];
        const double b = token[i + 1];
        token[i] = a * cos_row[i] - b * sin_row[i];
        token[i + 1] = b * cos_row[i + 1] + a * sin_row[i + 1];
    }
}

std::vector<double> apply_rotary(const std::vector<double>& x, const RotaryPhases& phases) {
    const int dim = phases.dim;
    if (dim == 0 || x.size() % dim != 0)
        throw ShapeError("apply_rotary: input width does not match phase dim");
    const size_t n = x.size() / dim;
    if (n != static_cast<size_t>(phases.positions()))
        throw ShapeError("apply_rotary: token count does not match phase count");

    std::vector<double> out = x;
    for (size_t p = 0; p < n; ++p)
        apply_rotary_token(out.data() + p * dim, phases.sin.data() + p * dim,
                           phases.cos.data() + p * dim, dim);
    return out;
}

PatchGrid extract_patches(const std::vector<double>& frames, int t_total, int channels,
                          int height, int width, int patch) {
    if (patch <= 0 || height % patch != 0 || width % patch != 0)
        throw ParameterError("extract_patches: patch size must divide frame height and width");
    if (frames.size() != static_cast<size_t>(t_total) * channels * height * width)
        throw ShapeError("extract_patches: frame buffer does not match declared shape");

    PatchGrid g;
    g.frames = t_total;
    g.patch_rows = height / patch;
    g.patch_cols = width / patch;
    g.patches_per_frame = g.patch_rows * g.patch_cols;
    g.patch_dim = channels * patch * patch;
    g.values.resize(static_cast<size_t>(t_total) * g.patches_per_frame * g.patch_dim);

    for (int t = 0; t < t_total; ++t) {
        for (int py = 0; py < g.patch_rows; ++py) {
            for (int px = 0; px < g.patch_cols; ++px) {
                double* dst = g.values.data() +
                              (static_cast<size_t>(t) * g.patches_per_frame +
                               static_cast<size_t>(py) * g.patch_cols + px) *
                                  g.patch_dim;
                for (int c = 0; c < channels; ++c)
                    for (int y = 0; y < patch; ++y)
                        for (int x = 0; x < patch; ++x) {
                            const size_t src =
                                ((static_cast<size_t>(t) * channels + c) * height +
                                 (py * patch + y)) *
                                    width +
                                (px * patch + x);
                            *dst++ = frames[src];
                        }
            }
        }
    }
    return g;
}

std::vector<double> fold_patches(const PatchGrid& grid, int channels, int height, int width) {
    const int patch = height / grid.patch_rows;
    if (grid.patch_dim != channels * patch * patch ||
        grid.patch_cols * patch != width || grid.patch_rows * patch != height)
        throw ShapeError("fold_patches: grid does not match target shape");

    std::vector<double> frames(static_cast<size_t>(grid.frames) * channels * height * width);
    for (int t = 0; t < grid.frames; ++t)
        for (int py = 0; py < grid.patch_rows; ++py)
            for (int px = 0; px < grid.patch_cols; ++px) {
                const double* src = grid.patch(t, py * grid.patch_cols + px);
                for (int c = 0; c < channels; ++c)
                    for (int y = 0; y < patch; ++y)
                        for (int x = 0; x < patch; ++x) {
                            const size_t dst =
                                ((static_cast<size_t>(t) * channels + c) * height +
                                 (py * patch + y)) *
                                    width +
                                (px * patch + x);
                            frames[dst] = *src++;
                        }
            }
    return frames;
}

std::vector<double> project_patches(const PatchGrid& grid, const std::vector<double>& weight,
                                    const std::vector<double>& bias, int dim) {
    if (weight.size() != static_cast<size_t>(grid.patch_dim) * dim)
        throw ShapeError("project_patches: weight shape mismatch");
    if (bias.size() != static_cast<size_t>(dim))
        throw ShapeError("project_patches: bias shape mismatch");

    const size_t tokens = static_cast<size_t>(grid.frames) * grid.patches_per_frame;
    std::vector<double> out(tokens * dim);
    for (size_t n = 0; n < tokens; ++n) {
        const double* p = grid.values.data() + n * grid.patch_dim;
        double* o = out.data() + n * dim;
        for (int j = 0; j < dim; ++j) o[j] = bias[j];
        for (int i = 0; i < grid.patch_dim; ++i) {
            const double v = p[i];
            const double* wrow = weight.data() + static_cast<size_t>(i) * dim;
            for (int j = 0; j < dim; ++j) o[j] += v * wrow[j];
        }
    }
    return out;
}

std::vector<int> mask_keep_indices(int n, double ratio, std::mt19937_64& rng) {
    if (ratio < 0.0 || ratio > 0.99)
        throw ParameterError("mask_keep_indices: masking ratio must lie in [0, 0.99]");
    if (n <= 0) throw ParameterError("mask_keep_indices: empty token set");

    const int keep = std::max(1, static_cast<int>(std::floor(n * (1.0 - ratio))));
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    if (keep == n) return idx;  // no-op fast path keeps original order

    // Partial Fisher-Yates: the first `keep` entries are a uniform sample.
    for (int i = 0; i < keep; ++i) {
        std::uniform_int_distribution<int> pick(i, n - 1);
        std::swap(idx[i], idx[pick(rng)]);
    }
    idx.resize(keep);
    std::sort(idx.begin(), idx.end());
    return idx;
}

}  // namespace heliocast::embed
