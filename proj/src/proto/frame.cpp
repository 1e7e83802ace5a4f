#include "sli/proto/frame.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>

namespace sli {

namespace {
constexpr char kMagic[4] = {'S', 'L', 'R', 'F'};

void put_u16(std::vector<uint8_t>& out, uint16_t v) {
    out.push_back(static_cast<uint8_t>(v & 0xff));
    out.push_back(static_cast<uint8_t>(v >> 8));
}
void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}
uint16_t get_u16(const uint8_t* p) { return static_cast<uint16_t>(p[0] | (p[1] << 8)); }
uint32_t get_u32(const uint8_t* p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

uint8_t position_code(TapPosition p) {
    switch (p) {
        case TapPosition::embedding: return 0;
        case TapPosition::attention_out: return 1;
        case TapPosition::ffn_out: return 2;
        case TapPosition::block_out: return 3;
    }
    return 0xff;
}

TapPosition position_from_code(uint8_t c) {
    switch (c) {
        case 0: return TapPosition::embedding;
        case 1: return TapPosition::attention_out;
        case 2: return TapPosition::ffn_out;
        case 3: return TapPosition::block_out;
        default: throw FrameError("frame: bad position code");
    }
}

}  // namespace

uint32_t crc32_bytes(const void* data, size_t len) {
    return static_cast<uint32_t>(
        ::crc32(0L, static_cast<const Bytef*>(data), static_cast<uInt>(len)));
}

std::vector<uint8_t> serialize_frame(const RepresentationTrace& trace, const Hash128& model_id) {
    for (float f : trace.states)
        if (!std::isfinite(f)) throw FrameError("refusing to serialize non-finite payload");
    std::vector<uint8_t> out;
    out.reserve(kFrameHeaderBytes + trace.states.size() * 4 + 4);
    out.insert(out.end(), kMagic, kMagic + 4);
    put_u16(out, kFrameVersion);
    out.insert(out.end(), model_id.begin(), model_id.end());
    put_u16(out, static_cast<uint16_t>(trace.tap.block_index));
    out.push_back(position_code(trace.tap.position));
    put_u32(out, static_cast<uint32_t>(trace.token_count));
    put_u32(out, static_cast<uint32_t>(trace.d_model));
    out.push_back(0);  // dtype 0 = f32
    for (float f : trace.states) {
        uint32_t bits;
        std::memcpy(&bits, &f, 4);
        put_u32(out, bits);
    }
    // The trailer covers header + payload so any single corrupted byte in the
    // frame is detected.
    const uint32_t crc = crc32_bytes(out.data(), out.size());
    put_u32(out, crc);
    return out;
}

RepresentationFrame deserialize_frame(const std::vector<uint8_t>& bytes) {
    if (bytes.size() < kFrameHeaderBytes + 4) throw FrameError("frame: too short");
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FrameError("frame: bad magic");
    if (get_u16(bytes.data() + 4) != kFrameVersion) throw FrameError("frame: bad version");
    RepresentationFrame fr;
    std::memcpy(fr.model_id.data(), bytes.data() + 6, 16);
    fr.trace.tap.block_index = get_u16(bytes.data() + 22);
    fr.trace.tap.position = position_from_code(bytes[24]);
    fr.trace.token_count = static_cast<int>(get_u32(bytes.data() + 25));
    fr.trace.d_model = static_cast<int>(get_u32(bytes.data() + 29));
    if (bytes[33] != 0) throw FrameError("frame: unsupported dtype");
    const size_t n = static_cast<size_t>(fr.trace.token_count) * fr.trace.d_model;
    if (bytes.size() != kFrameHeaderBytes + n * 4 + 4) throw FrameError("frame: length mismatch");
    const uint32_t crc = crc32_bytes(bytes.data(), bytes.size() - 4);
    if (crc != get_u32(bytes.data() + bytes.size() - 4))
        throw FrameError("frame: crc mismatch");
    fr.trace.states.resize(n);
    for (size_t i = 0; i < n; ++i) {
        const uint32_t bits = get_u32(bytes.data() + kFrameHeaderBytes + i * 4);
        float f;
        std::memcpy(&f, &bits, 4);
        fr.trace.states[i] = f;
    }
    return fr;
}

}  // namespace sli
