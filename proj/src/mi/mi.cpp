#include "sli/mi/mi.hpp"

#include "sli/core/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

namespace sli {

double mutual_information_bits(const std::vector<uint64_t>& a, const std::vector<uint64_t>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("mutual_information: length mismatch");
    if (a.empty()) throw std::invalid_argument("mutual_information: empty input");
    const double n = static_cast<double>(a.size());
    std::map<uint64_t, long> ca, cb;
    std::map<std::pair<uint64_t, uint64_t>, long> cab;
    for (size_t i = 0; i < a.size(); ++i) {
        ++ca[a[i]];
        ++cb[b[i]];
        ++cab[{a[i], b[i]}];
    }
    double mi = 0.0;
    for (const auto& [ab, c] : cab) {
        const double pab = c / n;
        const double pa = ca[ab.first] / n;
        const double pb = cb[ab.second] / n;
        mi += pab * std::log2(pab / (pa * pb));
    }
    return mi;
}

double entropy_bits(const std::vector<uint64_t>& a) {
    if (a.empty()) throw std::invalid_argument("entropy: empty input");
    const double n = static_cast<double>(a.size());
    std::map<uint64_t, long> c;
    for (uint64_t x : a) ++c[x];
    double h = 0.0;
    for (const auto& [sym, cnt] : c) {
        const double p = cnt / n;
        h -= p * std::log2(p);
    }
    return h;
}

void BinningConfig::validate() const {
    if (n_bins < 2) throw std::invalid_argument("n_bins must be >= 2");
    if (range_mode == RangeMode::fixed && !(fixed_lo < fixed_hi))
        throw std::invalid_argument("fixed range requires lo < hi");
    if (dim_reduction == DimReduction::random_projection && projection_dims < 1)
        throw std::invalid_argument("projection_dims must be >= 1");
}

namespace {

// Edge values fall into the lower bin (right-closed intervals).
int bin_index(double v, double lo, double hi, int n_bins) {
    if (hi <= lo) return 0;  // constant dimension
    const double w = (hi - lo) / n_bins;
    const double r = (v - lo) / w;
    int idx = static_cast<int>(std::ceil(r)) - 1;
    if (idx < 0) idx = 0;
    if (idx >= n_bins) idx = n_bins - 1;
    return idx;
}

Mat random_projection(const Mat& rows, int k, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(rows.cols)));
    Mat proj(rows.cols, k);
    for (auto& x : proj.data) x = dist(rng);
    Mat out;
    kernels::matmul(out, rows, proj);
    return out;
}

}  // namespace

std::vector<uint64_t> discretize(const Mat& rows, const BinningConfig& config,
                                 DiscretizeStats* stats) {
    config.validate();
    for (double v : rows.data)
        if (!std::isfinite(v)) throw std::invalid_argument("discretize: non-finite value");

    Mat work = rows;
    if (config.dim_reduction == DimReduction::random_projection && rows.cols > config.projection_dims)
        work = random_projection(rows, config.projection_dims, config.projection_seed);

    const int d = work.cols;
    std::vector<double> lo(d), hi(d);
    if (config.range_mode == RangeMode::fixed) {
        std::fill(lo.begin(), lo.end(), config.fixed_lo);
        std::fill(hi.begin(), hi.end(), config.fixed_hi);
    } else if (config.range_mode == RangeMode::global_minmax) {
        double gmin = work.data[0], gmax = work.data[0];
        for (double v : work.data) {
            gmin = std::min(gmin, v);
            gmax = std::max(gmax, v);
        }
        std::fill(lo.begin(), lo.end(), gmin);
        std::fill(hi.begin(), hi.end(), gmax);
    } else {
        for (int j = 0; j < d; ++j) {
            double mn = work.at(0, j), mx = work.at(0, j);
            for (int i = 1; i < work.rows; ++i) {
                mn = std::min(mn, work.at(i, j));
                mx = std::max(mx, work.at(i, j));
            }
            lo[j] = mn;
            hi[j] = mx;
        }
    }

    std::vector<uint64_t> symbols(work.rows);
    std::set<std::vector<int>> tuples;
    std::map<uint64_t, const std::vector<int>*> first_tuple;
    long collisions = 0;
    std::vector<int> tuple(d);
    for (int i = 0; i < work.rows; ++i) {
        for (int j = 0; j < d; ++j) tuple[j] = bin_index(work.at(i, j), lo[j], hi[j], config.n_bins);
        uint64_t h = 0xcbf29ce484222325ULL;
        for (int b : tuple) {
            h = (h ^ static_cast<uint64_t>(b)) * 0x100000001b3ULL;
            h = (h ^ 0xff) * 0x100000001b3ULL;
        }
        symbols[i] = h;
        if (stats) {
            auto [it, inserted] = tuples.insert(tuple);
            if (inserted) {
                auto [fit, fresh] = first_tuple.try_emplace(h, &*it);
                if (!fresh && *fit->second != tuple) ++collisions;
            }
        }
    }
    if (stats) {
        stats->distinct_tuples = static_cast<long>(tuples.size());
        stats->distinct_symbols = static_cast<long>(first_tuple.size());
        stats->hash_collisions = collisions;
    }
    return symbols;
}

std::vector<MIEstimate> information_plane(const VictimModel& victim,
                                          const std::vector<const TextRecord*>& records,
                                          const std::vector<TapPoint>& taps,
                                          const InfoPlaneConfig& config) {
    config.binning.validate();
    if (records.empty()) throw std::invalid_argument("information_plane: no records");
    if (config.sample_mode == SampleMode::per_record && !config.record_labels.empty() &&
        config.record_labels.size() != records.size())
        throw std::invalid_argument("information_plane: label count mismatch");

    std::vector<MIEstimate> out;
    for (const auto& tap : taps) {
        victim.validate_tap(tap);
        std::vector<uint64_t> xs, ys;
        std::vector<Mat> rows_per_sample;
        long total_rows = 0;
        std::vector<std::pair<RepresentationTrace, Mat>> runs;
        runs.reserve(records.size());
        for (const auto* rec : records) {
            std::vector<int> tok = rec->tokens;
            if (static_cast<int>(tok.size()) > victim.config().max_seq_len)
                tok.resize(victim.config().max_seq_len);
            runs.push_back(victim.forward_with_tap(tok, tap));
            total_rows += config.sample_mode == SampleMode::per_timestep
                              ? runs.back().first.token_count
                              : 1;
        }
        const int d = runs.front().first.d_model;
        Mat h_rows(static_cast<int>(total_rows), d);
        long row = 0;
        for (size_t r = 0; r < runs.size(); ++r) {
            const auto& [trace, logits] = runs[r];
            const auto* rec = records[r];
            const int T = trace.token_count;
            auto argmax_at = [&](int t) {
                const double* lr = logits.row(t);
                int best = 0;
                for (int j = 1; j < logits.cols; ++j)
                    if (lr[j] > lr[best]) best = j;
                return static_cast<uint64_t>(best);
            };
            if (config.sample_mode == SampleMode::per_timestep) {
                for (int t = 0; t < T; ++t) {
                    xs.push_back(static_cast<uint64_t>(rec->tokens[t]));
                    ys.push_back(argmax_at(t));
                    for (int j = 0; j < d; ++j)
                        h_rows.at(static_cast<int>(row), j) = trace.at(t, j);
                    ++row;
                }
            } else {
                xs.push_back(config.record_labels.empty()
                                 ? fnv128(rec->id.data(), rec->id.size())[0] |
                                       (static_cast<uint64_t>(r) << 32)
                                 : config.record_labels[r]);
                ys.push_back(argmax_at(T - 1));
                for (int j = 0; j < d; ++j)
                    h_rows.at(static_cast<int>(row), j) = trace.at(T - 1, j);
                ++row;
            }
        }
        const auto hs = discretize(h_rows, config.binning);

        MIEstimate est;
        est.tap = tap;
        est.binning = config.binning;
        est.n_samples = total_rows;
        est.i_xh_bits = mutual_information_bits(xs, hs);
        est.i_hy_bits = mutual_information_bits(hs, ys);
        const int active_dims =
            config.binning.dim_reduction == DimReduction::random_projection
                ? std::min(d, config.binning.projection_dims)
                : d;
        est.undersampled =
            total_rows < 10L * config.binning.n_bins * active_dims;
        out.push_back(est);
    }
    return out;
}

std::string info_plane_csv(const std::vector<MIEstimate>& estimates) {
    std::ostringstream ss;
    ss << "block_index,position,i_xh_bits,i_hy_bits,n_samples,undersampled\n";
    for (const auto& e : estimates) {
        ss << e.tap.block_index << "," << tap_position_name(e.tap.position) << ",";
        ss.precision(12);
        ss << e.i_xh_bits << "," << e.i_hy_bits << "," << e.n_samples << ","
           << (e.undersampled ? 1 : 0) << "\n";
    }
    return ss.str();
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2)
        throw std::invalid_argument("pearson: need two equal-length series");
    const double n = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0, sa = 0, sb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        sa += (a[i] - ma) * (a[i] - ma);
        sb += (b[i] - mb) * (b[i] - mb);
    }
    if (sa == 0 || sb == 0) return 0.0;
    return sab / std::sqrt(sa * sb);
}

}  // namespace sli
