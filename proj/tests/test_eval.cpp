#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <random>

#include "doctest.h"
#include "sli/eval/metrics.hpp"

using namespace sli;
namespace fs = std::filesystem;

namespace {

// Independent ROUGE-L oracle: plain recursive LCS with memoization instead of
// the iterative DP in the library.
int lcs_rec(const std::vector<int>& a, const std::vector<int>& b, size_t i, size_t j,
            std::map<std::pair<size_t, size_t>, int>& memo) {
    if (i == a.size() || j == b.size()) return 0;
    const auto key = std::make_pair(i, j);
    if (auto it = memo.find(key); it != memo.end()) return it->second;
    int r;
    if (a[i] == b[j])
        r = 1 + lcs_rec(a, b, i + 1, j + 1, memo);
    else
        r = std::max(lcs_rec(a, b, i + 1, j, memo), lcs_rec(a, b, i, j + 1, memo));
    memo[key] = r;
    return r;
}

std::vector<int> strip(const std::vector<int>& toks) {
    std::vector<int> out;
    for (int t : toks)
        if (t != Vocab::kBos && t != Vocab::kEos) out.push_back(t);
    return out;
}

double rouge_oracle(const std::vector<int>& cand, const std::vector<int>& ref) {
    const auto c = strip(cand), r = strip(ref);
    if (c.empty() || r.empty()) return 0.0;
    std::map<std::pair<size_t, size_t>, int> memo;
    const double l = lcs_rec(c, r, 0, 0, memo);
    if (l == 0) return 0.0;
    const double p = l / c.size(), q = l / r.size();
    return 2 * p * q / (p + q);
}

// Independent BLEU-4 oracle written directly from the definition.
double bleu_oracle(const std::vector<int>& cand_in, const std::vector<int>& ref_in) {
    const auto cand = strip(cand_in);
    const auto ref = strip(ref_in);
    if (cand.empty()) return 0.0;

    double log_sum = 0.0;
    for (int n = 1; n <= 4; ++n) {
        std::map<std::vector<int>, int> cn, rn;
        for (size_t i = 0; n <= static_cast<int>(cand.size()) && i + n <= cand.size(); ++i)
            ++cn[std::vector<int>(cand.begin() + i, cand.begin() + i + n)];
        for (size_t i = 0; n <= static_cast<int>(ref.size()) && i + n <= ref.size(); ++i)
            ++rn[std::vector<int>(ref.begin() + i, ref.begin() + i + n)];
        long num = 0, den = 0;
        for (const auto& [g, c] : cn) {
            num += std::min<long>(c, rn.count(g) ? rn.at(g) : 0);
            den += c;
        }
        if (n == 1 && num == 0) return 0.0;  // hard zero on no unigram overlap
        double p;
        if (num == 0 || den == 0)
            p = static_cast<double>(num + 1) / (den + 1);  // add-one smoothing
        else
            p = static_cast<double>(num) / den;
        log_sum += 0.25 * std::log(p);
    }
    const double bp =
        cand.size() >= ref.size() ? 1.0 : std::exp(1.0 - static_cast<double>(ref.size()) / cand.size());
    return bp * std::exp(log_sum);
}

std::vector<int> random_sentence(std::mt19937_64& rng, int vocab, int min_len = 1,
                                 int max_len = 14) {
    const int n = min_len + static_cast<int>(rng() % (max_len - min_len + 1));
    std::vector<int> out{Vocab::kBos};
    for (int i = 0; i < n; ++i) out.push_back(3 + static_cast<int>(rng() % (vocab - 3)));
    out.push_back(Vocab::kEos);
    return out;
}

}  // namespace

TEST_CASE("ROUGE-L matches the recursive-LCS oracle on 50 random pairs") {
    std::mt19937_64 rng(55);
    for (int i = 0; i < 50; ++i) {
        const auto a = random_sentence(rng, 12);
        const auto b = random_sentence(rng, 12);
        CHECK(std::fabs(rouge_l(a, b) - rouge_oracle(a, b)) <= 1e-9);
    }
}

TEST_CASE("BLEU matches the direct-definition oracle on 50 random pairs") {
    std::mt19937_64 rng(56);
    for (int i = 0; i < 50; ++i) {
        const auto a = random_sentence(rng, 10);
        const auto b = random_sentence(rng, 10);
        CHECK(std::fabs(bleu(a, {b}) - bleu_oracle(a, b)) <= 1e-9);
    }
}

TEST_CASE("cosine(b) matches a direct token-count oracle on 50 random pairs") {
    std::mt19937_64 rng(57);
    const int vocab = 15;
    const auto emb = token_count_embedder(vocab);
    for (int i = 0; i < 50; ++i) {
        const auto a = random_sentence(rng, vocab);
        const auto b = random_sentence(rng, vocab);
        std::vector<double> ca(vocab, 0.0), cb(vocab, 0.0);
        for (int t : strip(a)) ca[t] += 1.0;
        for (int t : strip(b)) cb[t] += 1.0;
        double dot = 0, na = 0, nb = 0;
        for (int j = 0; j < vocab; ++j) {
            dot += ca[j] * cb[j];
            na += ca[j] * ca[j];
            nb += cb[j] * cb[j];
        }
        const double expect = (na == 0 || nb == 0) ? 0.0 : dot / std::sqrt(na * nb);
        CHECK(std::fabs(cosine_similarity(a, b, emb) - expect) <= 1e-9);
    }
}

TEST_CASE("identical sentences score exactly 1 on all metrics") {
    std::mt19937_64 rng(58);
    const auto emb = token_count_embedder(40);
    for (int i = 0; i < 10; ++i) {
        const auto s = random_sentence(rng, 40, 5, 14);
        CHECK(rouge_l(s, s) == 1.0);
        CHECK(bleu(s, {s}) == 1.0);
        CHECK(cosine_similarity(s, s, emb) == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("a realistic identical pair through the text pipeline scores 1.0") {
    Vocab v;
    const std::string text = "no i just make boats on the weekend . what else do you do ?";
    for (const auto& w : {std::string("no")}) (void)w;
    // Build the vocab from the sentence itself.
    {
        std::string word;
        for (char c : text + " ") {
            if (c == ' ') {
                if (!word.empty()) v.add(word);
                word.clear();
            } else {
                word += c;
            }
        }
    }
    const auto toks = tokenize(text, v);
    CHECK(rouge_l(toks, toks) == 1.0);
    CHECK(bleu(toks, {toks}) == 1.0);
    CHECK(detokenize(toks, v) == text);
}

TEST_CASE("hand-computed BLEU fixtures") {
    // cand = [a b c d], ref = [a b c e]:
    //   p1 = 3/4, p2 = 2/3, p3 = 1/2, p4 smoothed = 1/2, BP = 1.
    const std::vector<int> cand{Vocab::kBos, 3, 4, 5, 6, Vocab::kEos};
    const std::vector<int> ref{Vocab::kBos, 3, 4, 5, 7, Vocab::kEos};
    const double expect =
        std::pow((3.0 / 4) * (2.0 / 3) * (1.0 / 2) * (1.0 / 2), 0.25);
    CHECK(bleu(cand, {ref}) == doctest::Approx(expect).epsilon(1e-12));

    // No unigram overlap is a hard zero even with smoothing.
    CHECK(bleu({Vocab::kBos, 3, 4, Vocab::kEos}, {{Vocab::kBos, 5, 6, Vocab::kEos}}) == 0.0);

    // Brevity penalty: cand = [a], ref = [a b c d]: p1 = 1, the higher-order
    // precisions smooth to 1 (no n-grams exist), so the score is just
    // BP = e^(1-4).
    const std::vector<int> shorty{Vocab::kBos, 3, Vocab::kEos};
    const std::vector<int> longy{Vocab::kBos, 3, 4, 5, 6, Vocab::kEos};
    CHECK(bleu(shorty, {longy}) == doctest::Approx(std::exp(1.0 - 4.0)).epsilon(1e-9));
}

TEST_CASE("bleu picks the closest reference length for the brevity penalty") {
    const std::vector<int> cand{Vocab::kBos, 3, 4, Vocab::kEos};
    const std::vector<int> ref_short{Vocab::kBos, 3, 4, Vocab::kEos};
    const std::vector<int> ref_long{Vocab::kBos, 3, 4, 5, 6, 7, 8, Vocab::kEos};
    // Closest reference has the same length -> BP = 1 -> perfect score.
    CHECK(bleu(cand, {ref_long, ref_short}) == 1.0);
}

TEST_CASE("empty-side handling") {
    const std::vector<int> only_specials{Vocab::kBos, Vocab::kEos};
    const std::vector<int> s{Vocab::kBos, 3, 4, Vocab::kEos};
    CHECK_THROWS(rouge_l(only_specials, s));
    CHECK_THROWS(rouge_l(s, only_specials));
}

TEST_CASE("evaluate_run aggregates match per-pair means and ignore input order") {
    Vocab v;
    for (const char* w : {"red", "green", "blue", "dog", "cat", "runs", "fast"}) v.add(w);
    std::vector<InversionTriple> triples{
        {"r3", "red dog runs", "red dog runs"},
        {"r1", "green cat runs fast", "green dog runs"},
        {"r2", "blue cat", "red dog"},
    };
    const auto emb = token_count_embedder(v.size());
    const auto rep = evaluate_run(triples, v, emb);
    REQUIRE(rep.n_pairs == 3);
    REQUIRE(rep.per_pair.size() == 3);

    double mr = 0, mb = 0, mc = 0;
    for (const auto& p : rep.per_pair) {
        mr += p.rouge_l;
        mb += p.bleu;
        mc += p.cos_sim;
    }
    CHECK(rep.rouge_l == doctest::Approx(mr / 3).epsilon(1e-12));
    CHECK(rep.bleu == doctest::Approx(mb / 3).epsilon(1e-12));
    CHECK(rep.cos_sim == doctest::Approx(mc / 3).epsilon(1e-12));

    // Per-pair rows are sorted by record id, so shuffled input gives an
    // identical report.
    auto shuffled = triples;
    std::swap(shuffled[0], shuffled[2]);
    const auto rep2 = evaluate_run(shuffled, v, emb);
    CHECK(rep2.rouge_l == rep.rouge_l);
    CHECK(rep2.per_pair[0].record_id == "r1");
    CHECK(rep.per_pair[0].record_id == "r1");
}

TEST_CASE("inversion files round trip and reports serialize") {
    std::vector<InversionTriple> triples{{"a", "the truth", "the guess"},
                                         {"b", "x y z", "x y"}};
    const std::string p = (fs::temp_directory_path() / "sli_test_inv.tsv").string();
    write_inversions(triples, p, true);
    const auto back = load_inversions(p);
    fs::remove(p);
    REQUIRE(back.size() == 2);
    CHECK(back[0].record_id == "a");
    CHECK(back[0].truth == "the truth");
    CHECK(back[0].guess == "the guess");
    CHECK(back[1].guess == "x y");

    Vocab v;
    for (const char* w : {"the", "truth", "guess", "x", "y", "z"}) v.add(w);
    const auto rep = evaluate_run(back, v, token_count_embedder(v.size()));
    const std::string csv = report_csv(rep);
    CHECK(csv.find("record_id") != std::string::npos);
    CHECK(csv.find("summary") != std::string::npos);
}

TEST_CASE("victim embedding embedder produces cosine 1 for identical input") {
    Corpus corpus = make_splits(synth_corpus(61, 30, TemplateGrammar::persona_default()), 0.7,
                                0.15, 0.15, 0.1, 61);
    ModelConfig mc;
    mc.n_blocks = 2;
    mc.d_model = 16;
    mc.n_heads = 2;
    mc.d_ff = 32;
    mc.vocab_size = corpus.vocab.size();
    mc.seed = 1;
    auto victim = std::make_shared<VictimModel>(mc);
    const auto emb = victim_embedding_embedder(victim);
    const auto& t0 = corpus.records[0].tokens;
    const auto& t1 = corpus.records[1].tokens;
    CHECK(cosine_similarity(t0, t0, emb) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(cosine_similarity(t0, t1, emb) <= 1.0 + 1e-12);
}
