#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "sli/core/matrix.hpp"

namespace sli {

using Hash128 = std::array<uint8_t, 16>;

std::string hash_hex(const Hash128& h);
Hash128 fnv128(const void* data, size_t len);

// Round every entry through IEEE f32. Models are snapped after training so
// that a checkpoint save/load round trip is bit-exact.
void snap_f32(Mat& m);
float to_f32(double x);

// Self-describing checkpoint container: magic "SLCK", u16 version,
// u32 header length, JSON header (free-form meta + tensor directory),
// then tensor payloads as row-major f32 little-endian in directory order.
struct Checkpoint {
    nlohmann::json meta;
    std::vector<std::pair<std::string, Mat>> tensors;

    const Mat& tensor(const std::string& name) const;
    Hash128 content_hash() const;

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);
    std::vector<uint8_t> serialize() const;
    static Checkpoint deserialize(const std::vector<uint8_t>& bytes);
};

std::vector<uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::vector<uint8_t>& bytes);

}  // namespace sli
