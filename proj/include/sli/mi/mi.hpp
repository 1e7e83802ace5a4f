#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sli/model/model.hpp"
#include "sli/proto/capture.hpp"

namespace sli {

// Plug-in (empirical) mutual information in bits between two equal-length
// symbol sequences.
double mutual_information_bits(const std::vector<uint64_t>& a, const std::vector<uint64_t>& b);
double entropy_bits(const std::vector<uint64_t>& a);

enum class RangeMode { global_minmax, per_dim_minmax, fixed };
enum class DimReduction { none, per_dim_then_joint_hash, random_projection };

struct BinningConfig {
    int n_bins = 30;
    RangeMode range_mode = RangeMode::global_minmax;
    double fixed_lo = -1.0, fixed_hi = 1.0;  // range_mode == fixed
    DimReduction dim_reduction = DimReduction::random_projection;
    int projection_dims = 10;
    uint64_t projection_seed = 17;

    void validate() const;
};

struct DiscretizeStats {
    long distinct_tuples = 0;
    long distinct_symbols = 0;
    long hash_collisions = 0;  // tuples that landed on an already-taken symbol
};

// Map each row to a tuple of per-dimension bin indices (after optional
// dimensionality reduction), then to one joint 64-bit symbol. Values lying
// exactly on a bin edge fall into the lower (right-closed) bin. A constant
// dimension maps to bin 0.
std::vector<uint64_t> discretize(const Mat& rows, const BinningConfig& config,
                                 DiscretizeStats* stats = nullptr);

struct MIEstimate {
    TapPoint tap;
    double i_xh_bits = 0.0;
    double i_hy_bits = 0.0;
    long n_samples = 0;
    bool undersampled = false;
    BinningConfig binning;
};

enum class SampleMode {
    // One sample per (record, timestep): X is the input token at that step,
    // Y the model's argmax next-token prediction at the same step.
    per_timestep,
    // One sample per record: X is the record id (or a supplied label), Y the
    // argmax prediction at the final position, H the final-position row.
    per_record,
};

struct InfoPlaneConfig {
    BinningConfig binning;
    SampleMode sample_mode = SampleMode::per_timestep;
    std::vector<uint64_t> record_labels;  // optional, per_record mode
};

std::vector<MIEstimate> information_plane(const VictimModel& victim,
                                          const std::vector<const TextRecord*>& records,
                                          const std::vector<TapPoint>& taps,
                                          const InfoPlaneConfig& config);

// CSV rows: block_index,position,i_xh_bits,i_hy_bits,n_samples,undersampled_flag
std::string info_plane_csv(const std::vector<MIEstimate>& estimates);

double pearson(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace sli
