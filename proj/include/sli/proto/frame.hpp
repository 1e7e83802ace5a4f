#pragma once

#include <cstdint>
#include <vector>

#include "sli/core/checkpoint.hpp"
#include "sli/model/model.hpp"

namespace sli {

// Wire format for one transmitted representation ("SLRF"):
//   magic(4) version(u16) model_id(16) block_index(u16) position(u8)
//   T(u32) d(u32) dtype(u8, 0 = f32)            -- 34-byte header
//   payload: T*d row-major f32 little-endian
//   crc32 of header + payload (4 bytes)
// All multi-byte integers little-endian.
inline constexpr size_t kFrameHeaderBytes = 34;
inline constexpr uint16_t kFrameVersion = 1;

struct FrameError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::vector<uint8_t> serialize_frame(const RepresentationTrace& trace, const Hash128& model_id);

struct RepresentationFrame {
    Hash128 model_id;
    RepresentationTrace trace;  // source_id not carried on the wire
};

RepresentationFrame deserialize_frame(const std::vector<uint8_t>& bytes);

uint32_t crc32_bytes(const void* data, size_t len);

}  // namespace sli
