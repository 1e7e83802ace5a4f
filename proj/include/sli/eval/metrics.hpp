#pragma once

#include <functional>
#include <string>
#include <vector>

#include "sli/corpus/corpus.hpp"
#include "sli/model/model.hpp"

namespace sli {

// ROUGE-L F-measure over token sequences: P = LCS/|cand|, R = LCS/|ref|,
// F = 2PR/(P+R), 0 when the LCS is empty.
double rouge_l(const std::vector<int>& candidate, const std::vector<int>& reference);

// BLEU-4: geometric mean of clipped n-gram precisions with brevity penalty.
// Hard zero when there is no unigram overlap; higher-order precisions use
// add-one smoothing only when their raw numerator (or denominator) is zero,
// so a perfect match still scores exactly 1.
double bleu(const std::vector<int>& candidate,
            const std::vector<std::vector<int>>& references);

using SentenceEmbedder = std::function<std::vector<double>(const std::vector<int>& tokens)>;

// Embedder (a): mean-pooled victim embedding rows (token + position).
SentenceEmbedder victim_embedding_embedder(std::shared_ptr<const VictimModel> victim);
// Embedder (b): L2-normalized token-count vector over the vocabulary.
SentenceEmbedder token_count_embedder(int vocab_size);

// Cosine of the embedder outputs; a zero vector on either side yields 0.
double cosine_similarity(const std::vector<int>& candidate, const std::vector<int>& reference,
                         const SentenceEmbedder& embedder);

struct InversionTriple {
    std::string record_id;
    std::string truth;
    std::string guess;
};

struct PairScore {
    std::string record_id;
    double rouge_l = 0.0;
    double bleu = 0.0;
    double cos_sim = 0.0;
};

struct EvalReport {
    double rouge_l = 0.0;
    double bleu = 0.0;
    double cos_sim = 0.0;
    long n_pairs = 0;
    std::vector<PairScore> per_pair;
};

EvalReport evaluate_run(const std::vector<InversionTriple>& inversions, const Vocab& vocab,
                        const SentenceEmbedder& embedder, bool keep_per_pair = true);

// Report file: per-pair rows plus a summary footer; CSV variant for plotting.
void write_report(const EvalReport& report, const std::string& path);
std::string report_csv(const EvalReport& report);

// Inversion output file: (record_id, ground_truth, inverted_text) rows.
void write_inversions(const std::vector<InversionTriple>& triples, const std::string& path,
                      bool with_truth);
std::vector<InversionTriple> load_inversions(const std::string& path);

}  // namespace sli
