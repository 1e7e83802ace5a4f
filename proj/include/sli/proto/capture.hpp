#pragma once

#include <string>
#include <vector>

#include "sli/proto/frame.hpp"

namespace sli {

struct CaptureItem {
    std::vector<uint8_t> frame_bytes;
    std::string record_id;
    Split split = Split::train;
};

// One serialized frame per record of a corpus slice, plus the manifest
// linking frames back to record ids. Ground-truth text stays in the corpus;
// only the attacker-training side is allowed to join on record_id.
struct CaptureSet {
    Hash128 model_id{};
    TapPoint tap;
    std::vector<CaptureItem> items;

    size_t payload_bytes() const;
    void write_dir(const std::string& dir) const;  // frame files + manifest.tsv
    static CaptureSet load_dir(const std::string& dir);
};

CaptureSet capture_dataset(const VictimModel& victim, const TapPoint& tap, const Corpus& corpus,
                           Split split);

}  // namespace sli
