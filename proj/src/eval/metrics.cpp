#include "sli/eval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace sli {

namespace {

std::vector<int> strip_specials(const std::vector<int>& tokens) {
    std::vector<int> out;
    for (int t : tokens)
        if (t != Vocab::kBos && t != Vocab::kEos) out.push_back(t);
    return out;
}

int lcs_length(const std::vector<int>& a, const std::vector<int>& b) {
    std::vector<int> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (size_t i = 1; i <= a.size(); ++i) {
        for (size_t j = 1; j <= b.size(); ++j) {
            if (a[i - 1] == b[j - 1])
                cur[j] = prev[j - 1] + 1;
            else
                cur[j] = std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

}  // namespace

double rouge_l(const std::vector<int>& candidate, const std::vector<int>& reference) {
    const auto cand = strip_specials(candidate);
    const auto ref = strip_specials(reference);
    if (cand.empty() || ref.empty()) throw std::invalid_argument("rouge_l: empty sequence");
    const int lcs = lcs_length(cand, ref);
    if (lcs == 0) return 0.0;
    const double p = static_cast<double>(lcs) / cand.size();
    const double r = static_cast<double>(lcs) / ref.size();
    return 2.0 * p * r / (p + r);
}

double bleu(const std::vector<int>& candidate, const std::vector<std::vector<int>>& references) {
    const auto cand = strip_specials(candidate);
    if (cand.empty()) throw std::invalid_argument("bleu: empty candidate");
    std::vector<std::vector<int>> refs;
    for (const auto& r : references) {
        auto s = strip_specials(r);
        if (!s.empty()) refs.push_back(std::move(s));
    }
    if (refs.empty()) throw std::invalid_argument("bleu: no non-empty references");

    double log_sum = 0.0;
    for (int n = 1; n <= 4; ++n) {
        std::map<std::vector<int>, int> cand_ngrams;
        for (size_t i = 0; i + n <= cand.size(); ++i)
            ++cand_ngrams[std::vector<int>(cand.begin() + i, cand.begin() + i + n)];
        long clipped = 0, total = 0;
        for (const auto& [ng, c] : cand_ngrams) {
            int max_ref = 0;
            for (const auto& ref : refs) {
                int cnt = 0;
                for (size_t i = 0; i + n <= ref.size(); ++i)
                    if (std::equal(ng.begin(), ng.end(), ref.begin() + i)) ++cnt;
                max_ref = std::max(max_ref, cnt);
            }
            clipped += std::min(c, max_ref);
            total += c;
        }
        if (n == 1 && clipped == 0) return 0.0;  // no unigram overlap: hard zero
        double p;
        if (total > 0 && clipped > 0)
            p = static_cast<double>(clipped) / total;
        else
            p = static_cast<double>(clipped + 1) / (total + 1);  // smoothing for short/zero cases
        log_sum += std::log(p);
    }
    // Brevity penalty against the closest reference length.
    size_t ref_len = refs[0].size();
    for (const auto& ref : refs) {
        const auto d_new = std::llabs(static_cast<long long>(ref.size()) -
                                      static_cast<long long>(cand.size()));
        const auto d_old = std::llabs(static_cast<long long>(ref_len) -
                                      static_cast<long long>(cand.size()));
        if (d_new < d_old || (d_new == d_old && ref.size() < ref_len)) ref_len = ref.size();
    }
    const double bp =
        cand.size() >= ref_len ? 1.0
                               : std::exp(1.0 - static_cast<double>(ref_len) / cand.size());
    return bp * std::exp(log_sum / 4.0);
}

SentenceEmbedder victim_embedding_embedder(std::shared_ptr<const VictimModel> victim) {
    return [victim](const std::vector<int>& tokens) {
        std::vector<int> tok = tokens;
        if (static_cast<int>(tok.size()) > victim->config().max_seq_len)
            tok.resize(victim->config().max_seq_len);
        auto [trace, logits] =
            victim->forward_with_tap(tok, TapPoint{0, TapPosition::embedding});
        (void)logits;
        std::vector<double> out(trace.d_model, 0.0);
        for (int t = 0; t < trace.token_count; ++t)
            for (int j = 0; j < trace.d_model; ++j) out[j] += trace.at(t, j);
        for (auto& x : out) x /= std::max(1, trace.token_count);
        return out;
    };
}

SentenceEmbedder token_count_embedder(int vocab_size) {
    return [vocab_size](const std::vector<int>& tokens) {
        std::vector<double> out(vocab_size, 0.0);
        for (int t : strip_specials(tokens))
            if (t >= 0 && t < vocab_size) out[t] += 1.0;
        double norm = 0.0;
        for (double x : out) norm += x * x;
        if (norm > 0) {
            norm = std::sqrt(norm);
            for (auto& x : out) x /= norm;
        }
        return out;
    };
}

double cosine_similarity(const std::vector<int>& candidate, const std::vector<int>& reference,
                         const SentenceEmbedder& embedder) {
    const auto a = embedder(candidate);
    const auto b = embedder(reference);
    if (a.size() != b.size()) throw std::invalid_argument("cosine: embedder dim mismatch");
    double dot = 0, na = 0, nb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0 || nb == 0) return 0.0;  // zero vector: defined as 0 similarity
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

EvalReport evaluate_run(const std::vector<InversionTriple>& inversions, const Vocab& vocab,
                        const SentenceEmbedder& embedder, bool keep_per_pair) {
    if (inversions.empty()) throw std::invalid_argument("evaluate_run: no pairs");
    // Deterministic aggregation order.
    std::vector<InversionTriple> sorted = inversions;
    std::sort(sorted.begin(), sorted.end(),
              [](const auto& a, const auto& b) { return a.record_id < b.record_id; });
    EvalReport rep;
    for (const auto& tr : sorted) {
        if (tr.truth.empty()) throw std::invalid_argument("evaluate_run: missing ground truth");
        const auto ref = tokenize(tr.truth, vocab);
        std::vector<int> cand;
        if (normalize(tr.guess).empty())
            cand = {Vocab::kBos, Vocab::kUnk, Vocab::kEos};  // score an empty guess as all-unk
        else
            cand = tokenize(tr.guess, vocab);
        PairScore ps;
        ps.record_id = tr.record_id;
        ps.rouge_l = rouge_l(cand, ref);
        ps.bleu = bleu(cand, {ref});
        ps.cos_sim = cosine_similarity(cand, ref, embedder);
        rep.rouge_l += ps.rouge_l;
        rep.bleu += ps.bleu;
        rep.cos_sim += ps.cos_sim;
        if (keep_per_pair) rep.per_pair.push_back(std::move(ps));
    }
    rep.n_pairs = static_cast<long>(sorted.size());
    rep.rouge_l /= rep.n_pairs;
    rep.bleu /= rep.n_pairs;
    rep.cos_sim /= rep.n_pairs;
    return rep;
}

void write_report(const EvalReport& report, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write report: " + path);
    f << report_csv(report);
}

std::string report_csv(const EvalReport& report) {
    std::ostringstream ss;
    ss.precision(12);
    ss << "record_id,rouge_l,bleu,cos_sim\n";
    for (const auto& p : report.per_pair)
        ss << p.record_id << "," << p.rouge_l << "," << p.bleu << "," << p.cos_sim << "\n";
    ss << "# summary,rouge_l=" << report.rouge_l << ",bleu=" << report.bleu
       << ",cos_sim=" << report.cos_sim << ",n_pairs=" << report.n_pairs << "\n";
    return ss.str();
}

void write_inversions(const std::vector<InversionTriple>& triples, const std::string& path,
                      bool with_truth) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write inversions: " + path);
    for (const auto& t : triples)
        f << t.record_id << "\t" << (with_truth ? t.truth : std::string()) << "\t" << t.guess
          << "\n";
}

std::vector<InversionTriple> load_inversions(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open inversions: " + path);
    std::vector<InversionTriple> out;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const auto t1 = line.find('\t');
        const auto t2 = line.find('\t', t1 + 1);
        if (t1 == std::string::npos || t2 == std::string::npos)
            throw std::runtime_error("malformed inversion line: " + line);
        out.push_back({line.substr(0, t1), line.substr(t1 + 1, t2 - t1 - 1), line.substr(t2 + 1)});
    }
    return out;
}

}  // namespace sli
