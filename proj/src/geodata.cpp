#include "heliocast/geodata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace heliocast::geodata {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Howard Hinnant's civil-date algorithm.
std::int64_t days_from_civil(int y, int m, int d) {
    y -= m <= 2;
    const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153u * static_cast<unsigned>(m + (m > 2 ? -3 : 9)) + 2u) / 5u +
                         static_cast<unsigned>(d) - 1u;
    const unsigned doe = yoe * 365u + yoe / 4u - yoe / 100u + doy;
    return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

void civil_from_days(std::int64_t z, int& y, int& m, int& d) {
    z += 719468;
    const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const std::int64_t yy = static_cast<std::int64_t>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    d = static_cast<int>(doy - (153 * mp + 2) / 5 + 1);
    m = static_cast<int>(mp < 10 ? mp + 3 : mp - 9);
    y = static_cast<int>(yy + (m <= 2));
}

int days_in_month(int year, int month) {
    static const int lengths[12] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
    if (month == 2) {
        const bool leap = (year % 4 == 0 && year % 100 != 0) || year % 400 == 0;
        return leap ? 29 : 28;
    }
    return lengths[month - 1];
}

bool is_irradiance_channel(const std::string& name) {
    return name == "ghi" || name == "dni" || name == "dhi" ||
           name.rfind("cs_", 0) == 0;
}

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split_csv_row(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) out.push_back(trim(field));
    if (!line.empty() && line.back() == ',') out.push_back("");
    return out;
}

}  // namespace

std::int64_t Timestamp::epoch_minutes() const {
    return days_from_civil(year, month, day) * 1440 + hour * 60 + minute;
}

bool Timestamp::valid() const {
    if (month < 1 || month > 12) return false;
    if (day < 1 || day > days_in_month(year, month)) return false;
    if (hour < 0 || hour > 23) return false;
    if (minute < 0 || minute > 59) return false;
    return true;
}

std::string Timestamp::iso8601() const {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:00Z", year, month, day, hour, minute);
    return buf;
}

Timestamp Timestamp::from_epoch_minutes(std::int64_t minutes) {
    std::int64_t days = minutes / 1440;
    std::int64_t rem = minutes % 1440;
    if (rem < 0) {
        rem += 1440;
        days -= 1;
    }
    Timestamp t;
    civil_from_days(days, t.year, t.month, t.day);
    t.hour = static_cast<int>(rem / 60);
    t.minute = static_cast<int>(rem % 60);
    return t;
}

Timestamp Timestamp::parse_iso8601(const std::string& text) {
    Timestamp t;
    int second = 0;
    int n = std::sscanf(text.c_str(), "%d-%d-%dT%d:%d:%d", &t.year, &t.month, &t.day, &t.hour,
                        &t.minute, &second);
    if (n < 5) {
        throw ParseError("unparseable ISO-8601 timestamp: '" + text + "'");
    }
    if (!t.valid()) {
        throw ValidationError("invalid calendar date/time: '" + text + "'");
    }
    if (second != 0) {
        throw ValidationError("timestamp not on the 30-minute grid: '" + text + "'");
    }
    return t;
}

void StationMeta::validate() const {
    if (latitude < -90.0 || latitude > 90.0)
        throw ValidationError("station '" + name + "': latitude out of [-90,90]");
    if (longitude < -180.0 || longitude > 180.0)
        throw ValidationError("station '" + name + "': longitude out of [-180,180]");
    if (elevation_m < -500.0)
        throw ValidationError("station '" + name + "': elevation below -500 m");
}

int StationSeries::channel_index(const std::string& name) const {
    auto it = std::find(channel_names.begin(), channel_names.end(), name);
    return it == channel_names.end() ? -1 : static_cast<int>(it - channel_names.begin());
}

std::vector<double> StationSeries::channel(const std::string& name) const {
    int c = channel_index(name);
    if (c < 0) throw ValidationError("series has no channel '" + name + "'");
    std::vector<double> out(rows());
    for (int t = 0; t < rows(); ++t) out[t] = at(t, c);
    return out;
}

int ContextCube::channel_index(const std::string& name) const {
    auto it = std::find(channel_names.begin(), channel_names.end(), name);
    return it == channel_names.end() ? -1 : static_cast<int>(it - channel_names.begin());
}

std::vector<double> Sample::target_values() const {
    std::vector<double> out(pred_len);
    for (int i = 0; i < pred_len; ++i) out[i] = series->at(target_begin() + i, target_channel);
    return out;
}

std::vector<double> Sample::history_target_channel() const {
    std::vector<double> out(hist_len);
    for (int i = 0; i < hist_len; ++i) out[i] = series->at(hist_begin + i, target_channel);
    return out;
}

// ---------------------------------------------------------------------------
// Station CSV
//
// Layout: optional "# key = value" metadata lines, then the header row
// "timestamp,<channel>,...", then one row per 30-minute stamp. Values use a
// decimal point and no thousands separators.
// ---------------------------------------------------------------------------

namespace {

struct RawRow {
    Timestamp stamp;
    std::vector<double> vals;
};

void impute_clear_sky_scaled(StationSeries& s, const std::vector<RawRow>& rows) {
    // Rebuild on the full 30-min grid; for irradiance channels interpolate the
    // clearness ratio against the matching cs_* channel, otherwise interpolate
    // the value itself.
    const std::int64_t t0 = rows.front().stamp.epoch_minutes();
    const std::int64_t t1 = rows.back().stamp.epoch_minutes();
    const int total = static_cast<int>((t1 - t0) / kStepMinutes) + 1;
    const int C = static_cast<int>(s.channel_names.size());

    std::vector<int> cs_partner(C, -1);
    for (int c = 0; c < C; ++c) {
        const std::string& name = s.channel_names[c];
        if (name == "ghi" || name == "dni" || name == "dhi") {
            auto it = std::find(s.channel_names.begin(), s.channel_names.end(), "cs_" + name);
            if (it != s.channel_names.end())
                cs_partner[c] = static_cast<int>(it - s.channel_names.begin());
        }
    }

    std::vector<char> present(total, 0);
    std::vector<double> grid(static_cast<size_t>(total) * C, 0.0);
    for (const RawRow& r : rows) {
        int idx = static_cast<int>((r.stamp.epoch_minutes() - t0) / kStepMinutes);
        present[idx] = 1;
        std::copy(r.vals.begin(), r.vals.end(), grid.begin() + static_cast<size_t>(idx) * C);
    }

    // cs_* channels must be filled first so ratios at gap edges are usable;
    // they are smooth, plain interpolation is adequate there.
    auto interp_channel = [&](int c, bool ratio_mode) {
        int prev = -1;
        for (int i = 0; i < total; ++i) {
            if (present[i]) {
                prev = i;
                continue;
            }
            int next = i + 1;
            while (next < total && !present[next]) ++next;
            // prev/next always exist: first and last rows are present.
            for (int j = i; j < next; ++j) {
                double w = static_cast<double>(j - prev) / (next - prev);
                double a = grid[static_cast<size_t>(prev) * C + c];
                double b = grid[static_cast<size_t>(next) * C + c];
                double v;
                if (ratio_mode) {
                    int cs = cs_partner[c];
                    double csa = std::max(grid[static_cast<size_t>(prev) * C + cs], 1.0);
                    double csb = std::max(grid[static_cast<size_t>(next) * C + cs], 1.0);
                    double csj = std::max(grid[static_cast<size_t>(j) * C + cs], 0.0);
                    double ra = a / csa, rb = b / csb;
                    v = ((1 - w) * ra + w * rb) * csj;
                } else {
                    v = (1 - w) * a + w * b;
                }
                grid[static_cast<size_t>(j) * C + c] = v;
            }
            i = next;
            prev = next;
        }
    };

    for (int c = 0; c < C; ++c)
        if (cs_partner[c] < 0) interp_channel(c, false);
    for (int c = 0; c < C; ++c)
        if (cs_partner[c] >= 0) interp_channel(c, true);

    s.timestamps.resize(total);
    for (int i = 0; i < total; ++i)
        s.timestamps[i] = Timestamp::from_epoch_minutes(t0 + static_cast<std::int64_t>(i) * kStepMinutes);
    s.values = std::move(grid);
}

}  // namespace

StationSeries load_station_series(const std::string& path, const LoadOptions& opts) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open station CSV: " + path);

    StationSeries s;
    std::string line;
    int line_no = 0;
    bool have_header = false;
    std::vector<RawRow> rows;

    while (std::getline(in, line)) {
        ++line_no;
        std::string t = trim(line);
        if (t.empty()) continue;
        if (t[0] == '#') {
            size_t eq = t.find('=');
            if (eq == std::string::npos) continue;
            std::string key = trim(t.substr(1, eq - 1));
            std::string val = trim(t.substr(eq + 1));
            if (key == "name") s.meta.name = val;
            else if (key == "latitude") s.meta.latitude = std::stod(val);
            else if (key == "longitude") s.meta.longitude = std::stod(val);
            else if (key == "elevation_m") s.meta.elevation_m = std::stod(val);
            continue;
        }
        if (!have_header) {
            auto fields = split_csv_row(t);
            if (fields.empty() || fields[0] != "timestamp")
                throw ParseError(path + ":" + std::to_string(line_no) +
                                 ": header must start with 'timestamp'");
            s.channel_names.assign(fields.begin() + 1, fields.end());
            if (s.channel_names.empty())
                throw ParseError(path + ":" + std::to_string(line_no) + ": no data channels");
            have_header = true;
            continue;
        }
        auto fields = split_csv_row(t);
        if (fields.size() != s.channel_names.size() + 1)
            throw ParseError(path + ":" + std::to_string(line_no) + ": expected " +
                             std::to_string(s.channel_names.size() + 1) + " fields, got " +
                             std::to_string(fields.size()));
        RawRow r;
        try {
            r.stamp = Timestamp::parse_iso8601(fields[0]);
        } catch (const Error& e) {
            throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
        if (r.stamp.minute % kStepMinutes != 0)
            throw ValidationError(path + ":" + std::to_string(line_no) +
                                  ": timestamp not on the 30-minute grid");
        r.vals.resize(s.channel_names.size());
        for (size_t i = 0; i < r.vals.size(); ++i) {
            try {
                size_t pos = 0;
                r.vals[i] = std::stod(fields[i + 1], &pos);
                if (pos != fields[i + 1].size()) throw std::invalid_argument("trailing junk");
            } catch (const std::exception&) {
                throw ParseError(path + ":" + std::to_string(line_no) + ": bad numeric field '" +
                                 fields[i + 1] + "' in column " + s.channel_names[i]);
            }
            if (!std::isfinite(r.vals[i]))
                throw ValidationError(path + ":" + std::to_string(line_no) +
                                      ": non-finite value in column " + s.channel_names[i]);
        }
        rows.push_back(std::move(r));
    }
    if (!have_header) throw ParseError(path + ": missing header row");
    if (rows.empty()) throw ParseError(path + ": no data rows");

    s.meta.validate();

    std::stable_sort(rows.begin(), rows.end(), [](const RawRow& a, const RawRow& b) {
        return a.stamp.epoch_minutes() < b.stamp.epoch_minutes();
    });
    for (size_t i = 1; i < rows.size(); ++i) {
        if (rows[i].stamp.epoch_minutes() == rows[i - 1].stamp.epoch_minutes())
            throw ValidationError(path + ": duplicate timestamp " + rows[i].stamp.iso8601());
    }

    // Gap scan on the 30-minute grid.
    std::vector<std::string> missing;
    for (size_t i = 1; i < rows.size(); ++i) {
        std::int64_t prev = rows[i - 1].stamp.epoch_minutes();
        std::int64_t cur = rows[i].stamp.epoch_minutes();
        for (std::int64_t m = prev + kStepMinutes; m < cur; m += kStepMinutes)
            missing.push_back(Timestamp::from_epoch_minutes(m).iso8601());
    }

    if (!missing.empty() && opts.gap_policy == GapPolicy::Reject) {
        std::string list;
        for (size_t i = 0; i < missing.size() && i < 8; ++i) {
            if (i) list += ", ";
            list += missing[i];
        }
        if (missing.size() > 8) list += ", ...";
        throw ValidationError(path + ": timestamp gap; missing " +
                              std::to_string(missing.size()) + " stamp(s): " + list);
    }

    if (!missing.empty()) {
        impute_clear_sky_scaled(s, rows);
    } else {
        s.timestamps.reserve(rows.size());
        s.values.reserve(rows.size() * s.channel_names.size());
        for (const RawRow& r : rows) {
            s.timestamps.push_back(r.stamp);
            s.values.insert(s.values.end(), r.vals.begin(), r.vals.end());
        }
    }

    for (int c = 0; c < s.cols(); ++c) {
        if (!is_irradiance_channel(s.channel_names[c])) continue;
        for (int t = 0; t < s.rows(); ++t) {
            if (s.at(t, c) < 0.0)
                throw ValidationError(path + ": negative irradiance in channel '" +
                                      s.channel_names[c] + "' at " + s.timestamps[t].iso8601());
        }
    }
    return s;
}

void save_station_series(const StationSeries& series, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write station CSV: " + path);
    out << "# name = " << series.meta.name << "\n";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", series.meta.latitude);
    out << "# latitude = " << buf << "\n";
    std::snprintf(buf, sizeof(buf), "%.10g", series.meta.longitude);
    out << "# longitude = " << buf << "\n";
    std::snprintf(buf, sizeof(buf), "%.10g", series.meta.elevation_m);
    out << "# elevation_m = " << buf << "\n";
    out << "timestamp";
    for (const auto& n : series.channel_names) out << "," << n;
    out << "\n";
    for (int t = 0; t < series.rows(); ++t) {
        out << series.timestamps[t].iso8601();
        for (int c = 0; c < series.cols(); ++c) {
            std::snprintf(buf, sizeof(buf), "%.10g", series.at(t, c));
            out << "," << buf;
        }
        out << "\n";
    }
    if (!out) throw Error("short write: " + path);
}

// ---------------------------------------------------------------------------
// Context cube container: <dir>/manifest.json + one f32le binary per frame,
// row-major [C,H,W], plus an elevation file [H,W].
// ---------------------------------------------------------------------------

namespace {

std::vector<float> read_f32_file(const fs::path& path, size_t expect) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open frame file: " + path.string());
    in.seekg(0, std::ios::end);
    const auto bytes = static_cast<size_t>(in.tellg());
    if (bytes != expect * sizeof(float))
        throw FormatError("frame file " + path.string() + ": expected " +
                          std::to_string(expect * sizeof(float)) + " bytes, got " +
                          std::to_string(bytes));
    in.seekg(0);
    std::vector<float> out(expect);
    in.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(bytes));
    if (!in) throw FormatError("short read: " + path.string());
    return out;
}

void write_f32_file(const fs::path& path, const float* data, size_t n) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write frame file: " + path.string());
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(float)));
    if (!out) throw Error("short write: " + path.string());
}

void check_monotone(const std::vector<double>& axis, const std::string& what) {
    bool inc = true, dec = true;
    for (size_t i = 1; i < axis.size(); ++i) {
        if (axis[i] <= axis[i - 1]) inc = false;
        if (axis[i] >= axis[i - 1]) dec = false;
    }
    if (axis.size() > 1 && !inc && !dec)
        throw ValidationError(what + " axis is not strictly monotone");
}

}  // namespace

ContextCube load_context_cube(const std::string& dir) {
    const fs::path root(dir);
    std::ifstream in(root / "manifest.json");
    if (!in) throw FormatError("cannot open manifest: " + (root / "manifest.json").string());
    json m;
    try {
        in >> m;
    } catch (const json::exception& e) {
        throw FormatError("manifest.json: " + std::string(e.what()));
    }

    ContextCube cube;
    try {
        if (m.at("dtype").get<std::string>() != "f32le")
            throw FormatError("manifest dtype must be 'f32le'");
        cube.t_total = m.at("shape").at("t").get<int>();
        cube.channels = m.at("shape").at("c").get<int>();
        cube.height = m.at("shape").at("h").get<int>();
        cube.width = m.at("shape").at("w").get<int>();
        cube.channel_names = m.at("channels").get<std::vector<std::string>>();
        cube.lat_axis = m.at("lat").get<std::vector<double>>();
        cube.lon_axis = m.at("lon").get<std::vector<double>>();
        for (const auto& ts : m.at("timestamps"))
            cube.timestamps.push_back(Timestamp::parse_iso8601(ts.get<std::string>()));
    } catch (const json::exception& e) {
        throw FormatError("manifest.json: " + std::string(e.what()));
    }

    if (cube.t_total <= 0 || cube.channels <= 0 || cube.height <= 0 || cube.width <= 0)
        throw FormatError("manifest declares an empty cube");
    if (static_cast<int>(cube.channel_names.size()) != cube.channels)
        throw FormatError("manifest channels list does not match declared channel count");
    if (static_cast<int>(cube.timestamps.size()) != cube.t_total)
        throw FormatError("manifest timestamps do not match declared frame count");
    if (static_cast<int>(cube.lat_axis.size()) != cube.height ||
        static_cast<int>(cube.lon_axis.size()) != cube.width)
        throw FormatError("coordinate vectors do not match grid shape");
    check_monotone(cube.lat_axis, "lat");
    check_monotone(cube.lon_axis, "lon");

    std::vector<std::string> frame_files;
    try {
        frame_files = m.at("frames").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        throw FormatError("manifest.json: " + std::string(e.what()));
    }
    if (static_cast<int>(frame_files.size()) != cube.t_total)
        throw FormatError("manifest lists " + std::to_string(frame_files.size()) +
                          " frames but declares t=" + std::to_string(cube.t_total));

    cube.frames.resize(static_cast<size_t>(cube.t_total) * cube.frame_elems());
    for (int t = 0; t < cube.t_total; ++t) {
        auto frame = read_f32_file(root / frame_files[t], cube.frame_elems());
        std::copy(frame.begin(), frame.end(),
                  cube.frames.begin() + static_cast<size_t>(t) * cube.frame_elems());
    }

    const std::string elev_file = m.value("elevation_file", std::string("elevation.bin"));
    cube.elevation =
        read_f32_file(root / elev_file, static_cast<size_t>(cube.height) * cube.width);
    return cube;
}

void save_context_cube(const ContextCube& cube, const std::string& dir) {
    const fs::path root(dir);
    fs::create_directories(root);

    json m;
    m["dtype"] = "f32le";
    m["shape"] = {{"t", cube.t_total}, {"c", cube.channels}, {"h", cube.height}, {"w", cube.width}};
    m["channels"] = cube.channel_names;
    m["lat"] = cube.lat_axis;
    m["lon"] = cube.lon_axis;
    m["elevation_file"] = "elevation.bin";
    std::vector<std::string> names;
    json stamps = json::array();
    for (int t = 0; t < cube.t_total; ++t) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "frame_%05d.bin", t);
        names.emplace_back(buf);
        stamps.push_back(cube.timestamps[t].iso8601());
    }
    m["frames"] = names;
    m["timestamps"] = stamps;

    std::ofstream out(root / "manifest.json");
    if (!out) throw Error("cannot write manifest: " + (root / "manifest.json").string());
    out << m.dump(2) << "\n";

    for (int t = 0; t < cube.t_total; ++t)
        write_f32_file(root / names[t], cube.frames.data() + static_cast<size_t>(t) * cube.frame_elems(),
                       cube.frame_elems());
    write_f32_file(root / "elevation.bin", cube.elevation.data(),
                   static_cast<size_t>(cube.height) * cube.width);
}

// ---------------------------------------------------------------------------
// Windowing
// ---------------------------------------------------------------------------

std::vector<Sample> make_windows(std::shared_ptr<const StationSeries> series,
                                 std::shared_ptr<const ContextCube> cube,
                                 int hist_len, int pred_len, int stride) {
    if (!series) throw ValidationError("make_windows: null series");
    if (hist_len <= 0 || pred_len <= 0 || stride <= 0)
        throw ParameterError("make_windows: hist/pred/stride must be positive");

    if (cube) {
        if (cube->t_total != series->rows())
            throw ValidationError("make_windows: series has " + std::to_string(series->rows()) +
                                  " rows but cube has " + std::to_string(cube->t_total) + " frames");
        for (int t = 0; t < series->rows(); ++t) {
            if (!(cube->timestamps[t] == series->timestamps[t]))
                throw ValidationError("make_windows: timestamp mismatch at index " +
                                      std::to_string(t) + ": series " +
                                      series->timestamps[t].iso8601() + " vs cube " +
                                      cube->timestamps[t].iso8601());
        }
    }

    int target_channel = series->channel_index("ghi");
    if (target_channel < 0) target_channel = 0;

    std::vector<Sample> out;
    const int total = series->rows();
    for (int begin = 0; begin + hist_len + pred_len <= total; begin += stride) {
        Sample s;
        s.series = series;
        s.cube = cube;
        s.hist_begin = begin;
        s.hist_len = hist_len;
        s.pred_len = pred_len;
        s.target_channel = target_channel;
        out.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

const NormStats::Moments& NormStats::require(const std::string& name) const {
    auto it = channels.find(name);
    if (it == channels.end()) throw ValidationError("no normalization stats for channel '" + name + "'");
    return it->second;
}

double NormStats::apply(double x, const std::string& name) const {
    const Moments& m = require(name);
    return (x - m.mean) / m.std;
}

double NormStats::invert(double x, const std::string& name) const {
    const Moments& m = require(name);
    return x * m.std + m.mean;
}

std::string NormStats::to_json() const {
    json j;
    for (const auto& [name, m] : channels) j[name] = {{"mean", m.mean}, {"std", m.std}};
    return j.dump(2);
}

NormStats NormStats::from_json(const std::string& text) {
    NormStats out;
    json j;
    try {
        j = json::parse(text);
        for (auto it = j.begin(); it != j.end(); ++it)
            out.channels[it.key()] = {it.value().at("mean").get<double>(),
                                      it.value().at("std").get<double>()};
    } catch (const json::exception& e) {
        throw FormatError("norm stats JSON: " + std::string(e.what()));
    }
    for (const auto& [name, m] : out.channels)
        if (!(m.std > 0.0))
            throw ValidationError("norm stats: channel '" + name + "' has std <= 0");
    return out;
}

void NormStats::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw Error("cannot write norm stats: " + path);
    out << to_json() << "\n";
}

NormStats NormStats::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open norm stats: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json(ss.str());
}

namespace {

NormStats::Moments moments_of(const std::vector<double>& xs, const std::string& name) {
    const double n = static_cast<double>(xs.size());
    double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= n;
    double sd = std::sqrt(var);
    if (!(sd > 1e-12))
        throw ValidationError("fit_norm: channel '" + name + "' is constant (std = 0)");
    return {mean, sd};
}

}  // namespace

NormStats fit_norm(const std::vector<const StationSeries*>& series_set,
                   const std::vector<const ContextCube*>& cubes) {
    if (series_set.empty() && cubes.empty())
        throw ConfigError("fit_norm: nothing to fit on");

    NormStats stats;
    if (!series_set.empty()) {
        const auto& names = series_set.front()->channel_names;
        for (const StationSeries* s : series_set)
            if (s->channel_names != names)
                throw ValidationError("fit_norm: series channel sets differ");
        for (size_t c = 0; c < names.size(); ++c) {
            std::vector<double> xs;
            for (const StationSeries* s : series_set)
                for (int t = 0; t < s->rows(); ++t) xs.push_back(s->at(t, static_cast<int>(c)));
            stats.channels["ts:" + names[c]] = moments_of(xs, "ts:" + names[c]);
        }
    }
    if (!cubes.empty()) {
        const auto& names = cubes.front()->channel_names;
        for (const ContextCube* q : cubes)
            if (q->channel_names != names)
                throw ValidationError("fit_norm: cube channel sets differ");
        for (size_t c = 0; c < names.size(); ++c) {
            std::vector<double> xs;
            for (const ContextCube* q : cubes)
                for (int t = 0; t < q->t_total; ++t)
                    for (int y = 0; y < q->height; ++y)
                        for (int x = 0; x < q->width; ++x)
                            xs.push_back(q->at(t, static_cast<int>(c), y, x));
            stats.channels["ctx:" + names[c]] = moments_of(xs, "ctx:" + names[c]);
        }
    }
    return stats;
}

}  // namespace heliocast::geodata
