#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "opq/imageio.hpp"
#include "opq/rng.hpp"

using namespace opq;
namespace fs = std::filesystem;

namespace {

std::string tmp_path(const std::string& name) {
    static fs::path dir = [] {
        fs::path d = fs::temp_directory_path() / "opq_imageio_tests";
        fs::create_directories(d);
        return d;
    }();
    return (dir / name).string();
}

void write_raw(const std::string& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::string read_raw(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

template <class F>
std::string thrown_message(F&& f) {
    try {
        f();
    } catch (const std::exception& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST_CASE("ppm round trip stays within the 8-bit quantization bound") {
    Rng rng(41);
    Tensor img = Tensor::random_uniform({3, 7, 9}, rng, 0.0f, 1.0f);
    std::string p = tmp_path("rt.ppm");
    write_ppm(p, img);
    Tensor back = read_ppm(p);
    REQUIRE(back.shape == img.shape);
    for (size_t i = 0; i < img.numel(); ++i)
        CHECK(std::fabs(back[i] - img[i]) <= 1.0f / 510.0f + 1e-7f);

    // writer determinism: same tensor, same bytes
    std::string p2 = tmp_path("rt2.ppm");
    write_ppm(p2, img);
    CHECK(read_raw(p) == read_raw(p2));
}

TEST_CASE("pgm round trips binary masks exactly") {
    Mask m(6, 4);
    m.at(1, 2) = 1.0f;
    m.at(3, 5) = 1.0f;
    std::string p = tmp_path("mask.pgm");
    write_pgm(p, m);
    CHECK(read_pgm(p).v == m.v);

    Mask zero(5, 5);
    write_pgm(p, zero);
    CHECK(read_pgm(p).v == zero.v);
}

TEST_CASE("hand-crafted 2x2 ppm bytes decode to the expected pixels") {
    std::string bytes = "P6\n2 2\n255\n";
    const uint8_t raster[] = {0, 0, 0, 255, 0, 0, 0, 255, 0, 0, 0, 255};
    bytes.append(reinterpret_cast<const char*>(raster), sizeof(raster));
    std::string p = tmp_path("fixture.ppm");
    write_raw(p, bytes);
    Tensor img = read_ppm(p);
    // black, red / green, blue
    CHECK(img.at3(0, 0, 0) == 0.0f);
    CHECK(img.at3(0, 0, 1) == 1.0f);
    CHECK(img.at3(1, 0, 1) == 0.0f);
    CHECK(img.at3(1, 1, 0) == 1.0f);
    CHECK(img.at3(2, 1, 0) == 0.0f);
    CHECK(img.at3(2, 1, 1) == 1.0f);
}

TEST_CASE("ppm reader diagnoses malformed and truncated files") {
    std::string p = tmp_path("bad.ppm");

    write_raw(p, "P3\n2 2\n255\n");
    std::string msg = thrown_message([&] { read_ppm(p); });
    CHECK(msg.find("P6") != std::string::npos);
    CHECK(msg.find("byte") != std::string::npos);

    write_raw(p, "P6\n2 -2\n255\n");
    CHECK(thrown_message([&] { read_ppm(p); }).find("height") != std::string::npos);

    write_raw(p, "P6\n2 2\n65535\nxxxxxxxxxxxx");
    CHECK(thrown_message([&] { read_ppm(p); }).find("maxval") != std::string::npos);

    write_raw(p, "P6\n2 2\n255\nxxx");
    CHECK(thrown_message([&] { read_ppm(p); }).find("truncated") != std::string::npos);
}

TEST_CASE("pfm round trip is bit-exact and reads back scale -1") {
    Rng rng(42);
    Tensor plane = Tensor::random_normal({5, 3}, rng, 1000.0f);
    std::string p = tmp_path("depth.pfm");
    write_pfm(p, plane);
    double scale = 0.0;
    Tensor back = read_pfm(p, &scale);
    REQUIRE(back.shape == plane.shape);
    CHECK(scale == -1.0);
    CHECK(std::memcmp(back.data.data(), plane.data.data(), plane.numel() * 4) == 0);
}

TEST_CASE("pfm fixture bytes decode bottom-up") {
    std::string bytes = "Pf\n1 2\n-1.0\n";
    const uint8_t raster[] = {0x00, 0x00, 0x80, 0x3F, 0x00, 0x00, 0x20, 0x40};  // 1.0f, 2.5f
    bytes.append(reinterpret_cast<const char*>(raster), sizeof(raster));
    std::string p = tmp_path("fixture.pfm");
    write_raw(p, bytes);
    Tensor plane = read_pfm(p);
    // first stored row is the bottom image row
    CHECK(plane.data[0] == 2.5f);
    CHECK(plane.data[1] == 1.0f);

    // the writer reproduces the fixture bytes exactly
    Tensor same({2, 1});
    same.data = {2.5f, 1.0f};
    std::string p2 = tmp_path("fixture_w.pfm");
    write_pfm(p2, same);
    CHECK(read_raw(p2) == bytes);

    write_raw(p, "PF\n1 1\n-1.0\nxxxx");
    CHECK(thrown_message([&] { read_pfm(p); }).find("grayscale") != std::string::npos);
    write_raw(p, "Pf\n1 1\n1.0\nxxxx");
    CHECK(thrown_message([&] { read_pfm(p); }).find("negative") != std::string::npos);
}

TEST_CASE("manifest writes sorted ids and round-trips records") {
    std::vector<SampleRecord> recs(3);
    recs[0] = {"s002", "b_tr.ppm", "b_op.ppm", "b.pfm", {"b_m0.pgm"}, 12, "train"};
    recs[1] = {"s000", "a_tr.ppm", "a_op.ppm", "a.pfm", {"a_m0.pgm", "a_m1.pgm"}, 10, "train"};
    recs[2] = {"s001", "c_tr.ppm", "c_op.ppm", "c.pfm", {}, 11, "train"};
    std::string p = tmp_path("manifest.json");
    write_manifest(p, recs);

    auto back = read_manifest(p, false);
    REQUIRE(back.size() == 3);
    CHECK(back[0].id == "s000");
    CHECK(back[1].id == "s001");
    CHECK(back[2].id == "s002");
    CHECK(back[0] == recs[1]);
    CHECK(back[1] == recs[2]);
    CHECK(back[2] == recs[0]);

    // identical bytes on rewrite
    std::string p2 = tmp_path("manifest2.json");
    write_manifest(p2, back);
    CHECK(read_raw(p) == read_raw(p2));
}

TEST_CASE("manifest loader verifies schema and referenced files") {
    std::string p = tmp_path("schema.json");
    write_raw(p, R"({"samples":[{"id":"x","image_tr":"a","image_op":"b","masks":[],"seed":1,"split":"val"}]})");
    CHECK(thrown_message([&] { read_manifest(p, false); }).find("depth") != std::string::npos);

    std::vector<SampleRecord> recs = {
        {"s0", "missing_tr.ppm", "missing_op.ppm", "missing.pfm", {}, 5, "test"}};
    std::string p2 = tmp_path("dangling.json");
    write_manifest(p2, recs);
    CHECK(thrown_message([&] { read_manifest(p2); }).find("missing_tr.ppm") !=
          std::string::npos);
    CHECK(read_manifest(p2, false).size() == 1);
}

TEST_CASE("csv writes the documented header with plain newlines") {
    Csv t;
    t.header = {"scene", "abs_rel", "rmse"};
    t.rows = {{"s000", "0.075", "100.0"}, {"s001", "0.080", "93.5"}};
    std::string p = tmp_path("report.csv");
    write_csv(p, t);

    std::string bytes = read_raw(p);
    CHECK(bytes == "scene,abs_rel,rmse\ns000,0.075,100.0\ns001,0.080,93.5\n");
    CHECK(bytes.find('\r') == std::string::npos);

    Csv back = read_csv(p);
    CHECK(back.header == t.header);
    CHECK(back.rows == t.rows);

    Csv bad;
    bad.header = {"a,b"};
    CHECK_THROWS(write_csv(tmp_path("bad.csv"), bad));
}
