#include "opq/imageio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace opq {

namespace {

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    check(f.good(), "cannot open " + path);
    std::string s((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    check(!f.bad(), "read failure on " + path);
    return s;
}

void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    check(f.good(), "cannot open " + path + " for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    f.flush();
    check(f.good(), "write failure on " + path);
}

// whitespace/comment-aware header scanner that tracks its byte offset for
// error messages
struct HeaderScanner {
    const std::string& s;
    const std::string& path;
    size_t pos = 0;

    [[noreturn]] void die(const std::string& why) const {
        fail(path + ": " + why + " at byte " + std::to_string(pos));
    }

    void skip_space() {
        while (pos < s.size()) {
            char c = s[pos];
            if (c == '#') {
                while (pos < s.size() && s[pos] != '\n') ++pos;
            } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
                ++pos;
            } else {
                return;
            }
        }
    }

    std::string token() {
        skip_space();
        size_t start = pos;
        while (pos < s.size() && !std::isspace(static_cast<unsigned char>(s[pos])) && s[pos] != '#')
            ++pos;
        if (pos == start) die("missing header field");
        return s.substr(start, pos - start);
    }

    int int_token(const char* what) {
        std::string t = token();
        try {
            size_t used = 0;
            int v = std::stoi(t, &used);
            if (used != t.size() || v <= 0) throw std::invalid_argument(t);
            return v;
        } catch (...) {
            pos -= t.size();
            die(std::string("bad ") + what + " '" + t + "'");
        }
    }

    double double_token(const char* what) {
        std::string t = token();
        try {
            size_t used = 0;
            double v = std::stod(t, &used);
            if (used != t.size()) throw std::invalid_argument(t);
            return v;
        } catch (...) {
            pos -= t.size();
            die(std::string("bad ") + what + " '" + t + "'");
        }
    }

    // the single whitespace byte that separates the header from raster data
    void raster_start() {
        if (pos >= s.size() || !std::isspace(static_cast<unsigned char>(s[pos])))
            die("expected whitespace before raster data");
        ++pos;
    }
};

uint8_t quantize(float v) {
    float c = std::clamp(v, 0.0f, 1.0f);
    return static_cast<uint8_t>(std::lround(c * 255.0f));
}

}  // namespace

void write_ppm(const std::string& path, const Tensor& img) {
    check(img.ndim() == 3 && img.dim(0) == 3, "write_ppm: image must be {3,H,W}");
    int H = img.dim(1), W = img.dim(2);
    std::string out = "P6\n" + std::to_string(W) + " " + std::to_string(H) + "\n255\n";
    out.reserve(out.size() + static_cast<size_t>(3) * H * W);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < 3; ++c) out.push_back(static_cast<char>(quantize(img.at3(c, y, x))));
    write_file(path, out);
}

Tensor read_ppm(const std::string& path) {
    std::string s = read_file(path);
    HeaderScanner h{s, path};
    if (h.token() != "P6") {
        h.pos = 0;
        h.die("not a binary PPM (expected magic P6)");
    }
    int W = h.int_token("width"), H = h.int_token("height");
    int maxval = h.int_token("maxval");
    if (maxval != 255) h.die("unsupported maxval " + std::to_string(maxval));
    h.raster_start();
    size_t need = static_cast<size_t>(3) * H * W;
    if (s.size() - h.pos < need)
        fail(path + ": truncated raster, need " + std::to_string(need) + " bytes, have " +
             std::to_string(s.size() - h.pos));
    Tensor img({3, H, W});
    const auto* p = reinterpret_cast<const uint8_t*>(s.data() + h.pos);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < 3; ++c) img.at3(c, y, x) = static_cast<float>(*p++) / 255.0f;
    return img;
}

void write_pgm(const std::string& path, const Mask& m) {
    check(m.width > 0 && m.height > 0, "write_pgm: empty mask");
    std::string out = "P5\n" + std::to_string(m.width) + " " + std::to_string(m.height) + "\n255\n";
    out.reserve(out.size() + m.size());
    for (float v : m.v) out.push_back(static_cast<char>(quantize(v)));
    write_file(path, out);
}

Mask read_pgm(const std::string& path) {
    std::string s = read_file(path);
    HeaderScanner h{s, path};
    if (h.token() != "P5") {
        h.pos = 0;
        h.die("not a binary PGM (expected magic P5)");
    }
    int W = h.int_token("width"), H = h.int_token("height");
    int maxval = h.int_token("maxval");
    if (maxval != 255) h.die("unsupported maxval " + std::to_string(maxval));
    h.raster_start();
    size_t need = static_cast<size_t>(W) * H;
    if (s.size() - h.pos < need)
        fail(path + ": truncated raster, need " + std::to_string(need) + " bytes, have " +
             std::to_string(s.size() - h.pos));
    Mask m(W, H);
    const auto* p = reinterpret_cast<const uint8_t*>(s.data() + h.pos);
    for (auto& v : m.v) v = static_cast<float>(*p++) / 255.0f;
    return m;
}

void write_pfm(const std::string& path, const Tensor& plane) {
    check(plane.ndim() == 2, "write_pfm: plane must be {H,W}");
    assert_finite(plane, "write_pfm");
    int H = plane.dim(0), W = plane.dim(1);
    std::string out = "Pf\n" + std::to_string(W) + " " + std::to_string(H) + "\n-1.0\n";
    out.reserve(out.size() + static_cast<size_t>(4) * H * W);
    for (int y = H - 1; y >= 0; --y) {  // bottom row first
        const float* row = plane.data.data() + static_cast<size_t>(y) * W;
        const char* bytes = reinterpret_cast<const char*>(row);
        out.append(bytes, static_cast<size_t>(4) * W);
    }
    write_file(path, out);
}

Tensor read_pfm(const std::string& path, double* scale_out) {
    std::string s = read_file(path);
    HeaderScanner h{s, path};
    std::string magic = h.token();
    if (magic != "Pf") {
        h.pos = 0;
        h.die(magic == "PF" ? "color PFM not supported (expected grayscale Pf)"
                            : "not a PFM (expected magic Pf)");
    }
    int W = h.int_token("width"), H = h.int_token("height");
    double scale = h.double_token("scale");
    if (scale >= 0.0) h.die("big-endian PFM not supported (scale must be negative)");
    if (scale_out) *scale_out = scale;
    h.raster_start();
    size_t need = static_cast<size_t>(4) * H * W;
    if (s.size() - h.pos < need)
        fail(path + ": truncated raster, need " + std::to_string(need) + " bytes, have " +
             std::to_string(s.size() - h.pos));
    Tensor plane({H, W});
    for (int y = H - 1; y >= 0; --y) {
        float* row = plane.data.data() + static_cast<size_t>(y) * W;
        std::memcpy(row, s.data() + h.pos, static_cast<size_t>(4) * W);
        h.pos += static_cast<size_t>(4) * W;
    }
    return plane;
}

namespace {

std::string json_string_field(const nlohmann::json& j, const std::string& field,
                              const std::string& where) {
    check(j.contains(field), where + ": missing field '" + field + "'");
    check(j[field].is_string(), where + ": field '" + field + "' must be a string");
    return j[field].get<std::string>();
}

}  // namespace

void write_manifest(const std::string& path, const std::vector<SampleRecord>& recs) {
    std::vector<const SampleRecord*> sorted;
    sorted.reserve(recs.size());
    for (const auto& r : recs) {
        check(!r.id.empty(), "write_manifest: empty sample id");
        sorted.push_back(&r);
    }
    std::sort(sorted.begin(), sorted.end(),
              [](const SampleRecord* a, const SampleRecord* b) { return a->id < b->id; });
    for (size_t i = 1; i < sorted.size(); ++i)
        check(sorted[i - 1]->id != sorted[i]->id,
              "write_manifest: duplicate sample id '" + sorted[i]->id + "'");

    nlohmann::json j;
    j["samples"] = nlohmann::json::array();
    for (const auto* r : sorted) {
        nlohmann::json e;
        e["id"] = r->id;
        e["image_tr"] = r->image_tr;
        e["image_op"] = r->image_op;
        e["depth"] = r->depth;
        e["masks"] = r->masks;
        e["seed"] = r->seed;
        e["split"] = r->split;
        j["samples"].push_back(std::move(e));
    }
    write_file(path, j.dump(2) + "\n");
}

std::vector<SampleRecord> read_manifest(const std::string& path, bool check_files) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        fail(path + ": " + e.what());
    }
    check(j.contains("samples") && j["samples"].is_array(), path + ": missing field 'samples'");

    auto dir = std::filesystem::path(path).parent_path();
    auto resolve = [&](const std::string& rel) { return (dir / rel).string(); };
    std::vector<SampleRecord> recs;
    for (const auto& e : j["samples"]) {
        SampleRecord r;
        r.id = json_string_field(e, "id", path);
        r.image_tr = json_string_field(e, "image_tr", path);
        r.image_op = json_string_field(e, "image_op", path);
        r.depth = json_string_field(e, "depth", path);
        r.split = json_string_field(e, "split", path);
        check(e.contains("seed") && e["seed"].is_number_unsigned(),
              path + ": missing field 'seed'");
        r.seed = e["seed"].get<uint64_t>();
        check(e.contains("masks") && e["masks"].is_array(), path + ": missing field 'masks'");
        for (const auto& m : e["masks"]) {
            check(m.is_string(), path + ": field 'masks' must hold strings");
            r.masks.push_back(m.get<std::string>());
        }
        if (check_files) {
            std::vector<std::string> paths = {r.image_tr, r.image_op, r.depth};
            paths.insert(paths.end(), r.masks.begin(), r.masks.end());
            for (const auto& p : paths)
                check(std::filesystem::exists(resolve(p)),
                      path + ": sample '" + r.id + "' references missing file " + resolve(p));
        }
        recs.push_back(std::move(r));
    }
    for (size_t i = 1; i < recs.size(); ++i)
        check(recs[i - 1].id < recs[i].id, path + ": sample ids not sorted/unique at '" +
                                               recs[i].id + "'");
    return recs;
}

namespace {

void check_cell(const std::string& cell, const std::string& path) {
    check(cell.find(',') == std::string::npos && cell.find('\n') == std::string::npos &&
              cell.find('\r') == std::string::npos,
          "write_csv: cell '" + cell + "' needs escaping, refusing to write " + path);
}

}  // namespace

void write_csv(const std::string& path, const Csv& table) {
    check(!table.header.empty(), "write_csv: empty header");
    std::string out;
    for (size_t i = 0; i < table.header.size(); ++i) {
        check_cell(table.header[i], path);
        out += (i ? "," : "") + table.header[i];
    }
    out += "\n";
    for (const auto& row : table.rows) {
        check(row.size() == table.header.size(),
              "write_csv: row width " + std::to_string(row.size()) + " != header width " +
                  std::to_string(table.header.size()));
        for (size_t i = 0; i < row.size(); ++i) {
            check_cell(row[i], path);
            out += (i ? "," : "") + row[i];
        }
        out += "\n";
    }
    write_file(path, out);
}

Csv read_csv(const std::string& path) {
    std::string s = read_file(path);
    Csv table;
    size_t pos = 0;
    bool first = true;
    while (pos < s.size()) {
        size_t end = s.find('\n', pos);
        check(end != std::string::npos, path + ": missing trailing newline");
        std::string line = s.substr(pos, end - pos);
        pos = end + 1;
        std::vector<std::string> cells;
        size_t p = 0;
        while (true) {
            size_t c = line.find(',', p);
            if (c == std::string::npos) {
                cells.push_back(line.substr(p));
                break;
            }
            cells.push_back(line.substr(p, c - p));
            p = c + 1;
        }
        if (first) {
            table.header = std::move(cells);
            first = false;
        } else {
            check(cells.size() == table.header.size(),
                  path + ": row width " + std::to_string(cells.size()) + " != header width " +
                      std::to_string(table.header.size()));
            table.rows.push_back(std::move(cells));
        }
    }
    check(!first, path + ": empty CSV");
    return table;
}

}  // namespace opq
