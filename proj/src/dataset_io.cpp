#include "chorus/dataset_io.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "chorus/text.hpp"

namespace chorus::dataset_io {

using nlohmann::json;

void write_file_atomic(const std::string& path, const std::string& contents) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot open '" + tmp + "' for writing");
        f.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!f) throw IoError("short write to '" + tmp + "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("rename '" + tmp + "' -> '" + path + "' failed: " + ec.message());
}

namespace {

json spec_to_json(const shiftlab::SyntheticSpec& spec) {
    json contexts = json::array();
    for (const auto& c : spec.contexts) {
        contexts.push_back(json{{"name", c.name}, {"shift", c.shift}, {"gain", c.gain}, {"noise", c.noise}});
    }
    return json{{"classes", spec.classes},
                {"channels", spec.channels},
                {"length", spec.length},
                {"samples_per_cell", spec.samples_per_cell},
                {"mix_strength", spec.mix_strength},
                {"seed", spec.seed},
                {"contexts", contexts}};
}

shiftlab::SyntheticSpec spec_from_json(const json& j) {
    shiftlab::SyntheticSpec spec;
    spec.classes = j.at("classes").get<int64_t>();
    spec.channels = j.at("channels").get<int64_t>();
    spec.length = j.at("length").get<int64_t>();
    spec.samples_per_cell = j.at("samples_per_cell").get<int64_t>();
    spec.mix_strength = j.at("mix_strength").get<double>();
    spec.seed = j.at("seed").get<uint64_t>();
    for (const auto& c : j.at("contexts")) {
        spec.contexts.push_back({c.at("name").get<std::string>(), c.at("shift").get<double>(),
                                 c.at("gain").get<double>(), c.at("noise").get<double>()});
    }
    return spec;
}

json values_to_json(const Tensor& t) {
    json arr = json::array();
    for (int64_t i = 0; i < t.size(); ++i) arr.push_back(static_cast<double>(t[i]));
    return arr;
}

Tensor values_from_json(const json& arr, int64_t channels, int64_t length) {
    if (static_cast<int64_t>(arr.size()) != channels * length) {
        throw IoError("sample value count does not match channels*length");
    }
    Tensor t({channels, length});
    for (int64_t i = 0; i < t.size(); ++i) t[i] = arr[static_cast<size_t>(i)].get<float>();
    return t;
}

}  // namespace

void save_dataset(const std::string& path, const shiftlab::Dataset& dataset) {
    std::ostringstream out;
    json header;
    header["type"] = "header";
    header["spec"] = spec_to_json(dataset.spec);
    out << header.dump() << "\n";
    for (const auto& s : dataset.samples) {
        json rec;
        rec["type"] = "sample";
        rec["context"] = dataset.context_specs[static_cast<size_t>(s.context)].name;
        rec["label"] = s.label;
        rec["values"] = values_to_json(s.values);
        out << rec.dump() << "\n";
    }
    write_file_atomic(path, out.str());
}

shiftlab::Dataset load_dataset(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open dataset '" + path + "'");
    std::string line;
    if (!std::getline(f, line)) throw IoError("dataset '" + path + "' is empty");
    json header;
    try {
        header = json::parse(line);
    } catch (const json::exception& e) {
        throw IoError(std::string("dataset header is not valid JSON: ") + e.what());
    }
    if (header.value("type", "") != "header") throw IoError("dataset missing header record");

    shiftlab::Dataset ds;
    ds.spec = spec_from_json(header.at("spec"));
    ds.context_specs = ds.spec.contexts;
    ds.train_reads.assign(ds.context_specs.size(), 0);
    for (const auto& c : ds.context_specs) {
        ds.contexts.push_back(make_context_record(c.name, c.name, text::kDefaultTextDim));
    }
    ds.by_context.assign(ds.context_specs.size(), {});

    int64_t idx = 0;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception& e) {
            throw IoError("dataset record " + std::to_string(idx) + " is not valid JSON: " + e.what());
        }
        if (rec.value("type", "") != "sample") throw IoError("unexpected record type in dataset");
        shiftlab::Sample s;
        const std::string ctx_name = rec.at("context").get<std::string>();
        s.context = static_cast<int32_t>(ds.context_index(ctx_name));
        s.label = rec.at("label").get<int32_t>();
        s.values = values_from_json(rec.at("values"), ds.spec.channels, ds.spec.length);
        ds.by_context[static_cast<size_t>(s.context)].push_back(idx);
        ds.samples.push_back(std::move(s));
        ++idx;
    }
    const int64_t expected = static_cast<int64_t>(ds.context_specs.size()) * ds.spec.classes *
                             ds.spec.samples_per_cell;
    if (idx != expected) {
        throw IoError("dataset '" + path + "' has " + std::to_string(idx) + " records, expected " +
                      std::to_string(expected));
    }
    return ds;
}

void save_trace(const std::string& path, const std::vector<streaming::StreamEvent>& trace) {
    std::ostringstream out;
    for (const auto& ev : trace) {
        json rec;
        rec["index"] = ev.index;
        rec["context"] = ev.context_id;
        rec["description"] = ev.description;
        rec["label"] = ev.label;
        rec["values"] = values_to_json(ev.segment);
        out << rec.dump() << "\n";
    }
    write_file_atomic(path, out.str());
}

std::vector<streaming::StreamEvent> load_trace(const std::string& path, const ModelDims& dims) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open trace '" + path + "'");
    std::vector<streaming::StreamEvent> trace;
    std::string line;
    int64_t prev_index = -1;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception& e) {
            throw IoError(std::string("trace record is not valid JSON: ") + e.what());
        }
        streaming::StreamEvent ev;
        ev.index = rec.at("index").get<int64_t>();
        if (ev.index <= prev_index) throw IoError("trace indices must be strictly increasing");
        prev_index = ev.index;
        ev.context_id = rec.at("context").get<std::string>();
        ev.description = rec.at("description").get<std::string>();
        ev.label = rec.at("label").get<int64_t>();
        ev.segment = values_from_json(rec.at("values"), dims.channels, dims.length);
        trace.push_back(std::move(ev));
    }
    return trace;
}

}  // namespace chorus::dataset_io
