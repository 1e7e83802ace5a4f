#include "sli/proto/capture.hpp"

#include <filesystem>
#include <fstream>

namespace sli {

size_t CaptureSet::payload_bytes() const {
    size_t n = 0;
    // Raw f32 payload only, excluding per-frame header and crc trailer.
    for (const auto& it : items) n += it.frame_bytes.size() - kFrameHeaderBytes - 4;
    return n;
}

void CaptureSet::write_dir(const std::string& dir) const {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::ofstream manifest(fs::path(dir) / "manifest.tsv");
    if (!manifest) throw std::runtime_error("cannot write capture manifest");
    manifest << "# model_id\t" << hash_hex(model_id) << "\ttap\t" << tap.str() << "\n";
    char name[32];
    for (size_t i = 0; i < items.size(); ++i) {
        std::snprintf(name, sizeof(name), "frame_%06zu.slrf", i);
        write_file_bytes((fs::path(dir) / name).string(), items[i].frame_bytes);
        manifest << name << "\t" << items[i].record_id << "\t" << split_name(items[i].split)
                 << "\n";
    }
}

CaptureSet CaptureSet::load_dir(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream manifest(fs::path(dir) / "manifest.tsv");
    if (!manifest) throw std::runtime_error("cannot open capture manifest in " + dir);
    CaptureSet cs;
    std::string line;
    bool first = true;
    while (std::getline(manifest, line)) {
        if (line.empty()) continue;
        if (first && line.front() == '#') {
            first = false;
            continue;
        }
        const auto t1 = line.find('\t');
        const auto t2 = line.find('\t', t1 + 1);
        if (t1 == std::string::npos || t2 == std::string::npos)
            throw std::runtime_error("malformed capture manifest line: " + line);
        CaptureItem it;
        it.frame_bytes = read_file_bytes((fs::path(dir) / line.substr(0, t1)).string());
        it.record_id = line.substr(t1 + 1, t2 - t1 - 1);
        it.split = split_from_name(line.substr(t2 + 1));
        cs.items.push_back(std::move(it));
    }
    if (!cs.items.empty()) {
        const auto fr = deserialize_frame(cs.items.front().frame_bytes);
        cs.model_id = fr.model_id;
        cs.tap = fr.trace.tap;
    }
    return cs;
}

CaptureSet capture_dataset(const VictimModel& victim, const TapPoint& tap, const Corpus& corpus,
                           Split split) {
    victim.validate_tap(tap);
    CaptureSet cs;
    cs.model_id = victim.model_id();
    cs.tap = tap;
    for (const auto* rec : corpus.slice(split)) {
        std::vector<int> tok = rec->tokens;
        if (static_cast<int>(tok.size()) > victim.config().max_seq_len)
            tok.resize(victim.config().max_seq_len);
        auto [trace, logits] = victim.forward_with_tap(tok, tap);
        (void)logits;
        trace.source_id = rec->id;
        CaptureItem it;
        it.frame_bytes = serialize_frame(trace, cs.model_id);
        it.record_id = rec->id;
        it.split = split;
        cs.items.push_back(std::move(it));
    }
    return cs;
}

}  // namespace sli
