#include "opq/checkpoint.hpp"

#include <cstdint>
#include <fstream>

#include <json.hpp>

namespace opq {

namespace {

using json = nlohmann::json;

void write_u64_le(std::ostream& os, uint64_t v) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(buf), 8);
}

uint64_t read_u64_le(std::istream& is) {
    unsigned char buf[8];
    is.read(reinterpret_cast<char*>(buf), 8);
    check(is.good(), "checkpoint: truncated header");
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(buf[i]) << (8 * i);
    return v;
}

constexpr char kMagic[9] = "OPQCKPT1";

}  // namespace

void save_checkpoint(const std::string& path, const ParamSet& ps) {
    std::ofstream os(path, std::ios::binary);
    check(os.good(), "checkpoint: cannot open '" + path + "' for writing");
    json manifest;
    manifest["dtype"] = "f32";
    manifest["params"] = json::array();
    for (size_t i = 0; i < ps.size(); ++i) {
        json entry;
        entry["name"] = ps.names[i];
        entry["shape"] = ps.vars[i].val().shape;
        manifest["params"].push_back(entry);
    }
    std::string mtext = manifest.dump();
    os.write(kMagic, 8);
    write_u64_le(os, mtext.size());
    os.write(mtext.data(), static_cast<std::streamsize>(mtext.size()));
    for (const auto& v : ps.vars) {
        const auto& d = v.val().data;
        os.write(reinterpret_cast<const char*>(d.data()),
                 static_cast<std::streamsize>(d.size() * sizeof(float)));
    }
    check(os.good(), "checkpoint: write failed for '" + path + "'");
}

std::vector<std::pair<std::string, Tensor>> read_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    check(is.good(), "checkpoint: cannot open '" + path + "'");
    char magic[8];
    is.read(magic, 8);
    check(is.good() && std::string(magic, 8) == kMagic,
          "checkpoint: bad magic in '" + path + "'");
    uint64_t mlen = read_u64_le(is);
    std::string mtext(mlen, '\0');
    is.read(mtext.data(), static_cast<std::streamsize>(mlen));
    check(is.good(), "checkpoint: truncated manifest in '" + path + "'");
    json manifest = json::parse(mtext);
    check(manifest.value("dtype", "") == "f32",
          "checkpoint: unsupported dtype in '" + path + "'");
    std::vector<std::pair<std::string, Tensor>> out;
    for (const auto& entry : manifest.at("params")) {
        std::string name = entry.at("name").get<std::string>();
        std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
        Tensor t(shape);
        is.read(reinterpret_cast<char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(float)));
        check(is.good(), "checkpoint: truncated blob for '" + name + "' in '" + path + "'");
        out.emplace_back(std::move(name), std::move(t));
    }
    return out;
}

void load_checkpoint(const std::string& path, ParamSet& ps) {
    auto entries = read_checkpoint(path);
    check(entries.size() == ps.size(),
          "checkpoint: '" + path + "' has " + std::to_string(entries.size()) +
              " params, model has " + std::to_string(ps.size()));
    for (auto& [name, t] : entries) {
        check(ps.has(name), "checkpoint: param '" + name + "' not in model");
        auto v = ps.get(name);
        check(v.val().same_shape(t), "checkpoint: shape mismatch for '" + name + "': file " +
                                         shape_str(t) + " vs model " + shape_str(v.val()));
        v.val().data = std::move(t.data);
    }
}

}  // namespace opq
