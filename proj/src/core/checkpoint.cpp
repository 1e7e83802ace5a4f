#include "sli/core/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace sli {

namespace {
constexpr char kMagic[4] = {'S', 'L', 'C', 'K'};
constexpr uint16_t kVersion = 1;

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
}  // namespace

std::string hash_hex(const Hash128& h) {
    static const char* digits = "0123456789abcdef";
    std::string s;
    s.reserve(32);
    for (uint8_t b : h) {
        s.push_back(digits[b >> 4]);
        s.push_back(digits[b & 0xf]);
    }
    return s;
}

Hash128 fnv128(const void* data, size_t len) {
    // Two independent 64-bit FNV-1a streams; identification only, not crypto.
    const auto* p = static_cast<const uint8_t*>(data);
    uint64_t h1 = 0xcbf29ce484222325ULL;
    uint64_t h2 = 0x84222325cbf29ce4ULL;
    for (size_t i = 0; i < len; ++i) {
        h1 = (h1 ^ p[i]) * 0x100000001b3ULL;
        h2 = (h2 ^ p[i]) * 0x100000001b5ULL;
    }
    Hash128 out{};
    for (int i = 0; i < 8; ++i) out[i] = static_cast<uint8_t>((h1 >> (8 * i)) & 0xff);
    for (int i = 0; i < 8; ++i) out[8 + i] = static_cast<uint8_t>((h2 >> (8 * i)) & 0xff);
    return out;
}

float to_f32(double x) { return static_cast<float>(x); }

void snap_f32(Mat& m) {
    for (auto& x : m.data) x = static_cast<double>(static_cast<float>(x));
}

const Mat& Checkpoint::tensor(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return t;
    throw std::out_of_range("checkpoint tensor not found: " + name);
}

std::vector<uint8_t> Checkpoint::serialize() const {
    nlohmann::json header;
    header["meta"] = meta;
    header["tensors"] = nlohmann::json::array();
    for (const auto& [name, t] : tensors)
        header["tensors"].push_back({{"name", name}, {"rows", t.rows}, {"cols", t.cols}});
    const std::string hs = header.dump();

    std::vector<uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 4);
    put_u16(out, kVersion);
    put_u32(out, static_cast<uint32_t>(hs.size()));
    out.insert(out.end(), hs.begin(), hs.end());
    for (const auto& [name, t] : tensors) {
        for (double x : t.data) {
            const float f = static_cast<float>(x);
            uint32_t bits;
            std::memcpy(&bits, &f, 4);
            put_u32(out, bits);
        }
    }
    return out;
}

Checkpoint Checkpoint::deserialize(const std::vector<uint8_t>& bytes) {
    if (bytes.size() < 10 || std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw std::runtime_error("checkpoint: bad magic");
    const uint16_t version = get_u16(bytes.data() + 4);
    if (version != kVersion) throw std::runtime_error("checkpoint: unsupported version");
    const uint32_t hlen = get_u32(bytes.data() + 6);
    if (bytes.size() < 10 + hlen) throw std::runtime_error("checkpoint: truncated header");
    nlohmann::json header =
        nlohmann::json::parse(bytes.begin() + 10, bytes.begin() + 10 + hlen);

    Checkpoint ck;
    ck.meta = header.at("meta");
    size_t off = 10 + hlen;
    for (const auto& td : header.at("tensors")) {
        const int rows = td.at("rows"), cols = td.at("cols");
        Mat m(rows, cols);
        const size_t need = m.size() * 4;
        if (bytes.size() < off + need) throw std::runtime_error("checkpoint: truncated payload");
        for (size_t i = 0; i < m.size(); ++i) {
            const uint32_t bits = get_u32(bytes.data() + off + i * 4);
            float f;
            std::memcpy(&f, &bits, 4);
            m.data[i] = static_cast<double>(f);
        }
        off += need;
        ck.tensors.emplace_back(td.at("name"), std::move(m));
    }
    return ck;
}

Hash128 Checkpoint::content_hash() const {
    const auto bytes = serialize();
    return fnv128(bytes.data(), bytes.size());
}

void Checkpoint::save(const std::string& path) const { write_file_bytes(path, serialize()); }

Checkpoint Checkpoint::load(const std::string& path) {
    return deserialize(read_file_bytes(path));
}

std::vector<uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open file: " + path);
    return std::vector<uint8_t>(std::istreambuf_iterator<char>(f),
                                std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::string& path, const std::vector<uint8_t>& bytes) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write file: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

}  // namespace sli
