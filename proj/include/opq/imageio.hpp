#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "opq/maskops.hpp"
#include "opq/tensor.hpp"

namespace opq {

// On-disk contracts. Every writer is deterministic (same input, same bytes);
// every reader rejects malformed or truncated files with a diagnostic that
// names the path and byte offset.

// binary PPM (P6, maxval 255) for {3,H,W} images in [0,1]; 8-bit
// quantization bounds the round-trip error by 1/510 per value
void write_ppm(const std::string& path, const Tensor& img);
Tensor read_ppm(const std::string& path);

// binary PGM (P5, maxval 255) for masks; exact on {0,1} values
void write_pgm(const std::string& path, const Mask& m);
Mask read_pgm(const std::string& path);

// grayscale PFM for {H,W} float planes: scale -1.0 (little-endian),
// bottom-up row order, bit-exact round trip
void write_pfm(const std::string& path, const Tensor& plane);
Tensor read_pfm(const std::string& path, double* scale_out = nullptr);

struct SampleRecord {
    std::string id;
    std::string image_tr;  // transparent rendering
    std::string image_op;  // opaque counterpart
    std::string depth;
    std::vector<std::string> masks;
    uint64_t seed = 0;
    std::string split;

    bool operator==(const SampleRecord&) const = default;
};

// JSON manifest of a dataset split, samples sorted by id. Paths inside the
// manifest are relative to the manifest's directory; loading verifies the
// referenced files exist unless check_files is off.
void write_manifest(const std::string& path, const std::vector<SampleRecord>& recs);
std::vector<SampleRecord> read_manifest(const std::string& path, bool check_files = true);

// minimal CSV with a fixed header, "\n" newlines, no quoting; cells must be
// free of commas and newlines (writers reject them rather than escape)
struct Csv {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};
void write_csv(const std::string& path, const Csv& table);
Csv read_csv(const std::string& path);

}  // namespace opq
