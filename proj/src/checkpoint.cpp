#include "heliocast/checkpoint.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace heliocast::nnet {

using nlohmann::json;

namespace {

void write_u64(std::ostream& out, std::uint64_t v) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t read_u64(std::istream& in) {
    unsigned char buf[8];
    in.read(reinterpret_cast<char*>(buf), 8);
    if (!in) throw FormatError("checkpoint: truncated header length");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    json header;
    header["config"] = json::parse(model_config_to_json(ckpt.config));
    header["norm_stats"] = json::parse(ckpt.norm_stats.to_json());
    header["rng_state"] = ckpt.rng_state;
    if (ckpt.train_state) {
        header["train_state"] = {{"next_epoch", ckpt.train_state->next_epoch},
                                 {"best_epoch", ckpt.train_state->best_epoch},
                                 {"since_best", ckpt.train_state->since_best}};
        // JSON has no infinity; omit best_val until a validation pass ran.
        if (std::isfinite(ckpt.train_state->best_val))
            header["train_state"]["best_val"] = ckpt.train_state->best_val;
    }

    json dir = json::array();
    std::uint64_t offset = 0;
    auto add_entry = [&](const std::string& name, const std::vector<int>& shape, size_t count) {
        dir.push_back({{"name", name}, {"shape", shape}, {"offset", offset}, {"count", count}});
        offset += count;
    };
    for (const auto& [name, p] : ckpt.params.all()) add_entry("param:" + name, p.shape(), p.size());
    if (ckpt.optimizer) {
        add_entry("opt:step", {1}, 1);
        for (const auto& [name, m] : ckpt.optimizer->m)
            add_entry("opt.m:" + name, {static_cast<int>(m.size())}, m.size());
        for (const auto& [name, v] : ckpt.optimizer->v)
            add_entry("opt.v:" + name, {static_cast<int>(v.size())}, v.size());
    }
    header["tensors"] = dir;

    const std::string head_text = header.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write checkpoint: " + path);
    out << kCheckpointMagic << "\n";
    write_u64(out, head_text.size());
    out.write(head_text.data(), static_cast<std::streamsize>(head_text.size()));

    auto write_data = [&](const double* d, size_t n) {
        out.write(reinterpret_cast<const char*>(d), static_cast<std::streamsize>(n * sizeof(double)));
    };
    for (const auto& [name, p] : ckpt.params.all()) write_data(p.value().data(), p.size());
    if (ckpt.optimizer) {
        const double step = static_cast<double>(ckpt.optimizer->step);
        write_data(&step, 1);
        for (const auto& [name, m] : ckpt.optimizer->m) write_data(m.data(), m.size());
        for (const auto& [name, v] : ckpt.optimizer->v) write_data(v.data(), v.size());
    }
    if (!out) throw Error("short write: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open checkpoint: " + path);

    std::string magic;
    std::getline(in, magic);
    if (magic != kCheckpointMagic)
        throw FormatError("checkpoint: bad magic string '" + magic + "'");

    const std::uint64_t head_len = read_u64(in);
    std::string head_text(head_len, '\0');
    in.read(head_text.data(), static_cast<std::streamsize>(head_len));
    if (!in) throw FormatError("checkpoint: truncated header");

    json header;
    try {
        header = json::parse(head_text);
    } catch (const json::exception& e) {
        throw FormatError("checkpoint header: " + std::string(e.what()));
    }

    Checkpoint ckpt;
    ckpt.config = model_config_from_json(header.at("config").dump());
    ckpt.norm_stats = geodata::NormStats::from_json(header.at("norm_stats").dump());
    ckpt.rng_state = header.value("rng_state", std::string());
    if (header.contains("train_state")) {
        train::TrainLoopState ts;
        ts.next_epoch = header["train_state"].at("next_epoch").get<int>();
        if (header["train_state"].contains("best_val"))
            ts.best_val = header["train_state"]["best_val"].get<double>();
        ts.best_epoch = header["train_state"].at("best_epoch").get<int>();
        ts.since_best = header["train_state"].at("since_best").get<int>();
        ckpt.train_state = ts;
    }

    const std::streampos data_begin = in.tellg();
    bool has_optimizer = false;
    for (const auto& entry : header.at("tensors")) {
        const std::string name = entry.at("name").get<std::string>();
        const auto shape = entry.at("shape").get<std::vector<int>>();
        const std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
        const std::uint64_t count = entry.at("count").get<std::uint64_t>();

        std::vector<double> data(count);
        in.seekg(data_begin + static_cast<std::streamoff>(offset * sizeof(double)));
        in.read(reinterpret_cast<char*>(data.data()),
                static_cast<std::streamsize>(count * sizeof(double)));
        if (!in) throw FormatError("checkpoint: truncated tensor " + name);

        if (name.rfind("param:", 0) == 0) {
            Tensor& t = ckpt.params.create(name.substr(6), shape);
            t.value() = std::move(data);
        } else if (name == "opt:step") {
            if (!ckpt.optimizer) ckpt.optimizer.emplace();
            ckpt.optimizer->step = static_cast<std::int64_t>(data[0]);
            has_optimizer = true;
        } else if (name.rfind("opt.m:", 0) == 0) {
            if (!ckpt.optimizer) ckpt.optimizer.emplace();
            ckpt.optimizer->m[name.substr(6)] = std::move(data);
            has_optimizer = true;
        } else if (name.rfind("opt.v:", 0) == 0) {
            if (!ckpt.optimizer) ckpt.optimizer.emplace();
            ckpt.optimizer->v[name.substr(6)] = std::move(data);
            has_optimizer = true;
        } else {
            throw FormatError("checkpoint: unknown tensor kind '" + name + "'");
        }
    }
    (void)has_optimizer;
    return ckpt;
}

}  // namespace heliocast::nnet
