#include "chorus/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace chorus::checkpoint {

using nlohmann::json;

namespace {

json dims_to_json(const ModelDims& d) {
    return json{{"channels", d.channels},     {"length", d.length},
                {"classes", d.classes},       {"latent", d.latent},
                {"text_dim", d.text_dim},     {"conv1", d.conv1},
                {"conv2", d.conv2},           {"kernel", d.kernel},
                {"stride", d.stride},         {"ctx_hidden", d.ctx_hidden},
                {"dec_hidden", d.dec_hidden}, {"head_hidden", d.head_hidden},
                {"gate_hidden", d.gate_hidden}, {"logvar_clamp", d.logvar_clamp}};
}

ModelDims dims_from_json(const json& j) {
    ModelDims d;
    d.channels = j.at("channels").get<int64_t>();
    d.length = j.at("length").get<int64_t>();
    d.classes = j.at("classes").get<int64_t>();
    d.latent = j.at("latent").get<int64_t>();
    d.text_dim = j.at("text_dim").get<int64_t>();
    d.conv1 = j.at("conv1").get<int64_t>();
    d.conv2 = j.at("conv2").get<int64_t>();
    d.kernel = j.at("kernel").get<int64_t>();
    d.stride = j.at("stride").get<int64_t>();
    d.ctx_hidden = j.at("ctx_hidden").get<int64_t>();
    d.dec_hidden = j.at("dec_hidden").get<int64_t>();
    d.head_hidden = j.at("head_hidden").get<int64_t>();
    d.gate_hidden = j.at("gate_hidden").get<int64_t>();
    d.logvar_clamp = j.at("logvar_clamp").get<double>();
    return d;
}

void write_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void write_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

uint32_t read_u32(const std::string& buf, size_t off) {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(buf[off + static_cast<size_t>(i)])) << (8 * i);
    return v;
}

uint64_t read_u64(const std::string& buf, size_t off) {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(buf[off + static_cast<size_t>(i)])) << (8 * i);
    return v;
}

}  // namespace

void save(const std::string& path, const ParamStore& params, const Meta& meta) {
    json header;
    header["dims"] = dims_to_json(meta.dims);
    header["regime"] = meta.regime;
    header["seed"] = meta.seed;
    header["head_mode"] = meta.head_mode;
    header["gate_mask"] = meta.gate_mask;
    if (meta.has_gate_stats) {
        json stats;
        stats["mean"] = json::array();
        stats["std"] = json::array();
        for (float v : meta.gate_mean) stats["mean"].push_back(static_cast<double>(v));
        for (float v : meta.gate_std) stats["std"].push_back(static_cast<double>(v));
        header["gate_stats"] = stats;
    } else {
        header["gate_stats"] = nullptr;
    }

    json tensors = json::array();
    int64_t offset = 0;
    for (const auto& [name, p] : params) {
        json t;
        t["name"] = name;
        t["offset"] = offset;
        t["shape"] = p.value.shape();
        tensors.push_back(t);
        offset += p.value.size();
    }
    header["tensors"] = tensors;

    const std::string header_str = header.dump();
    std::string out;
    out.reserve(16 + header_str.size() + static_cast<size_t>(offset) * 4);
    out += "CHOR";
    write_u32(out, kVersion);
    write_u64(out, header_str.size());
    out += header_str;
    for (const auto& [name, p] : params) {
        const size_t bytes = static_cast<size_t>(p.value.size()) * sizeof(float);
        const size_t pos = out.size();
        out.resize(pos + bytes);
        std::memcpy(out.data() + pos, p.value.data(), bytes);
    }

    // Atomic write: temp file in the same directory, then rename.
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot open '" + tmp + "' for writing");
        f.write(out.data(), static_cast<std::streamsize>(out.size()));
        if (!f) throw IoError("short write to '" + tmp + "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("rename '" + tmp + "' -> '" + path + "' failed: " + ec.message());
}

Loaded load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint '" + path + "'");
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (buf.size() < 16 || buf.compare(0, 4, "CHOR") != 0) {
        throw IoError("'" + path + "' is not a chorus checkpoint (bad magic)");
    }
    const uint32_t version = read_u32(buf, 4);
    if (version != kVersion) {
        throw IoError("unsupported checkpoint version " + std::to_string(version) +
                      " (expected " + std::to_string(kVersion) + ")");
    }
    const uint64_t header_len = read_u64(buf, 8);
    if (16 + header_len > buf.size()) throw IoError("checkpoint header extends past end of file");
    json header;
    try {
        header = json::parse(buf.substr(16, header_len));
    } catch (const json::exception& e) {
        throw IoError(std::string("checkpoint header is not valid JSON: ") + e.what());
    }

    Loaded out;
    out.meta.dims = dims_from_json(header.at("dims"));
    out.meta.regime = header.at("regime").get<std::string>();
    out.meta.seed = header.at("seed").get<uint64_t>();
    out.meta.head_mode = header.at("head_mode").get<std::string>();
    out.meta.gate_mask = header.at("gate_mask").get<std::string>();
    if (!header.at("gate_stats").is_null()) {
        out.meta.has_gate_stats = true;
        for (const auto& v : header["gate_stats"]["mean"]) out.meta.gate_mean.push_back(v.get<float>());
        for (const auto& v : header["gate_stats"]["std"]) out.meta.gate_std.push_back(v.get<float>());
    }

    const size_t blob_off = 16 + header_len;
    const size_t blob_floats = (buf.size() - blob_off) / sizeof(float);
    int64_t expected_end = 0;
    for (const auto& t : header.at("tensors")) {
        const std::string name = t.at("name").get<std::string>();
        const int64_t offset = t.at("offset").get<int64_t>();
        std::vector<int64_t> shape = t.at("shape").get<std::vector<int64_t>>();
        int64_t n = 1;
        for (int64_t d : shape) n *= d;
        if (offset != expected_end) {
            throw IoError("checkpoint tensor '" + name + "' has overlapping or gapped offset");
        }
        expected_end = offset + n;
        if (static_cast<size_t>(expected_end) > blob_floats) {
            throw IoError("checkpoint tensor '" + name + "' extends past the data blob");
        }
        Tensor v(shape);
        std::memcpy(v.data(), buf.data() + blob_off + static_cast<size_t>(offset) * sizeof(float),
                    static_cast<size_t>(n) * sizeof(float));
        out.params.add(name, std::move(v));
    }
    return out;
}

}  // namespace chorus::checkpoint
