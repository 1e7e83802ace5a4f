#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace sli {

enum class Split { train, val, test, aux };

std::string split_name(Split s);
Split split_from_name(const std::string& s);

// Word-level vocabulary. Ids 0..2 are reserved: BOS, EOS, UNK; word ids are
// dense above them.
class Vocab {
  public:
    static constexpr int kBos = 0;
    static constexpr int kEos = 1;
    static constexpr int kUnk = 2;

    Vocab();

    int add(const std::string& word);          // idempotent
    int id(const std::string& word) const;     // kUnk when absent
    const std::string& word(int id) const;
    int size() const { return static_cast<int>(words_.size()); }

    void save(const std::string& path) const;  // one token per line, line number = id
    static Vocab load(const std::string& path);

  private:
    std::vector<std::string> words_;
    std::map<std::string, int> index_;
};

struct TextRecord {
    std::string id;
    std::string text;            // normalized form
    std::vector<int> tokens;     // BOS ... EOS
};

struct Corpus {
    std::vector<TextRecord> records;
    std::map<std::string, Split> split_labels;
    Vocab vocab;

    std::vector<const TextRecord*> slice(Split s) const;
    const TextRecord* find(const std::string& id) const;
};

// Lowercase, collapse runs of whitespace to single spaces, trim.
std::string normalize(const std::string& text);

// Deterministic word tokenization of the normalized text: BOS + word ids +
// EOS, unknown words mapped to UNK. Empty input is an error.
std::vector<int> tokenize(const std::string& text, const Vocab& vocab);
std::string detokenize(const std::vector<int>& tokens, const Vocab& vocab);

// Templated persona-style sentence generator. Slot fillers cover names,
// hobbies, foods and places so entity leakage is measurable downstream.
struct TemplateGrammar {
    std::vector<std::string> templates;  // words with {slot} placeholders
    std::map<std::string, std::vector<std::string>> fillers;

    static TemplateGrammar persona_default();
};

Corpus synth_corpus(uint64_t seed, int n, const TemplateGrammar& grammar);

// Assign split labels; aux is drawn from the train portion (records keep
// their train membership list, aux being extra attacker-side access).
Corpus make_splits(Corpus corpus, double train_ratio, double val_ratio, double test_ratio,
                   double aux_fraction, uint64_t seed);

// External formats: corpus file is one sentence per line (UTF-8); split
// manifest maps id -> split label.
Corpus load_corpus_lines(const std::string& path, std::optional<Vocab> vocab = std::nullopt);
void save_corpus_lines(const Corpus& corpus, const std::string& path);
void save_split_manifest(const Corpus& corpus, const std::string& path);
void load_split_manifest(Corpus& corpus, const std::string& path);

}  // namespace sli
