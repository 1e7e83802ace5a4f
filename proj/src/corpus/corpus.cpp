#include "sli/corpus/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace sli {

std::string split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
        case Split::aux: return "aux";
    }
    return "?";
}

Split split_from_name(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    if (s == "aux") return Split::aux;
    throw std::invalid_argument("unknown split label: " + s);
}

Vocab::Vocab() {
    add("<bos>");
    add("<eos>");
    add("<unk>");
}

int Vocab::add(const std::string& word) {
    auto it = index_.find(word);
    if (it != index_.end()) return it->second;
    const int id = static_cast<int>(words_.size());
    words_.push_back(word);
    index_[word] = id;
    return id;
}

int Vocab::id(const std::string& word) const {
    auto it = index_.find(word);
    return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocab::word(int id) const {
    if (id < 0 || id >= size()) throw std::out_of_range("vocab id out of range");
    return words_[id];
}

void Vocab::save(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write vocab: " + path);
    for (const auto& w : words_) f << w << "\n";
}

Vocab Vocab::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open vocab: " + path);
    Vocab v;
    std::string line;
    int i = 0;
    while (std::getline(f, line)) {
        if (i < 3) {
            // reserved rows must match
            if (line != v.words_[i])
                throw std::runtime_error("vocab file: reserved token mismatch at line " +
                                         std::to_string(i));
        } else {
            v.add(line);
        }
        ++i;
    }
    return v;
}

std::vector<const TextRecord*> Corpus::slice(Split s) const {
    std::vector<const TextRecord*> out;
    for (const auto& r : records) {
        auto it = split_labels.find(r.id);
        if (it != split_labels.end() && it->second == s) out.push_back(&r);
    }
    return out;
}

const TextRecord* Corpus::find(const std::string& id) const {
    for (const auto& r : records)
        if (r.id == id) return &r;
    return nullptr;
}

std::string normalize(const std::string& text) {
    std::string out;
    out.reserve(text.size());
    bool in_space = true;
    for (unsigned char c : text) {
        if (std::isspace(c)) {
            if (!in_space) out.push_back(' ');
            in_space = true;
        } else {
            out.push_back(static_cast<char>(std::tolower(c)));
            in_space = false;
        }
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    return out;
}

std::vector<int> tokenize(const std::string& text, const Vocab& vocab) {
    const std::string norm = normalize(text);
    if (norm.empty()) throw std::invalid_argument("empty input");
    std::vector<int> out;
    out.push_back(Vocab::kBos);
    std::istringstream ss(norm);
    std::string w;
    while (ss >> w) out.push_back(vocab.id(w));
    out.push_back(Vocab::kEos);
    return out;
}

std::string detokenize(const std::vector<int>& tokens, const Vocab& vocab) {
    std::string out;
    for (int t : tokens) {
        if (t == Vocab::kBos || t == Vocab::kEos) continue;
        if (!out.empty()) out.push_back(' ');
        out += vocab.word(t);
    }
    return out;
}

TemplateGrammar TemplateGrammar::persona_default() {
    TemplateGrammar g;
    g.fillers["name"] = {"alice", "bob",  "carol", "dave",  "erin",
                         "frank", "grace", "heidi", "ivan",  "judy",
                         "mallory", "oscar", "peggy", "trent", "victor"};
    g.fillers["hobby"] = {"fishing",  "painting", "hiking",  "chess",   "gardening",
                          "swimming", "cooking",  "reading", "running", "knitting",
                          "surfing",  "dancing",  "camping", "cycling", "skiing"};
    g.fillers["food"] = {"pizza",  "sushi",   "tacos",  "pasta",   "pancakes",
                         "salad",  "burgers", "ramen",  "curry",   "waffles",
                         "cheese", "apples",  "mango",  "noodles", "chocolate"};
    g.fillers["place"] = {"paris",  "tokyo",   "boston", "madrid", "cairo",
                          "oslo",   "dublin",  "lima",   "seoul",  "denver",
                          "vienna", "toronto", "miami",  "berlin", "sydney"};
    g.fillers["animal"] = {"dogs", "cats", "horses", "parrots", "rabbits",
                           "turtles", "goats", "ferrets", "hamsters", "pigeons"};
    g.fillers["job"] = {"teacher", "nurse", "farmer", "writer", "driver",
                        "baker",   "coach", "lawyer", "singer", "plumber"};
    g.fillers["day"] = {"monday", "tuesday", "friday", "saturday", "sunday"};
    g.fillers["number"] = {"two", "three", "four", "five", "six", "seven"};
    g.templates = {
        "hi my name is {name} and i love {hobby} .",
        "i work as a {job} in {place} and i like {food} .",
        "my friend {name} goes {hobby} every {day} with me .",
        "do you like {food} ? i eat it every {day} .",
        "i have {number} {animal} and they love {food} .",
        "what do you do for fun ? i enjoy {hobby} .",
        "i just moved to {place} to work as a {job} .",
        "on {day} i usually go {hobby} near {place} .",
        "my favorite food is {food} but i also like {food} .",
        "i am {name} , a {job} who loves {animal} .",
        "we visited {place} last year and tried {food} there .",
        "my {animal} are named after {name} and {name} .",
        "being a {job} is hard but {hobby} relaxes me .",
        "i grew up in {place} with {number} {animal} .",
        "hello i am {name} , nice to meet you .",
        "do you enjoy {hobby} ? my sister {name} does .",
        "i cook {food} for my family every {day} evening .",
        "someday i want to move to {place} and keep {animal} .",
        "my brother is a {job} and he hates {food} .",
        "i spend my weekends {hobby} or watching my {animal} .",
        "what is your favorite place ? mine is {place} .",
        "i met {name} while {hobby} in {place} last summer .",
        "as a {job} i travel to {place} about {number} times .",
        "my {number} {animal} eat {food} which is strange .",
    };
    return g;
}

namespace {

uint64_t splitmix64(uint64_t& x) {
    x += 0x9e3779b97f4a7c15ULL;
    uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::string fill_template(const TemplateGrammar& g, const std::string& tpl, uint64_t st) {
    std::string out;
    size_t pos = 0;
    while (pos < tpl.size()) {
        if (tpl[pos] == '{') {
            const size_t end = tpl.find('}', pos);
            if (end == std::string::npos) throw std::runtime_error("unterminated slot in template");
            const std::string slot = tpl.substr(pos + 1, end - pos - 1);
            auto it = g.fillers.find(slot);
            if (it == g.fillers.end()) throw std::runtime_error("unknown slot: " + slot);
            out += it->second[splitmix64(st) % it->second.size()];
            pos = end + 1;
        } else {
            out.push_back(tpl[pos++]);
        }
    }
    return out;
}

}  // namespace

Corpus synth_corpus(uint64_t seed, int n, const TemplateGrammar& grammar) {
    if (n <= 0) throw std::invalid_argument("synth_corpus: n must be positive");
    if (grammar.templates.size() < 20)
        throw std::invalid_argument("synth_corpus: grammar needs at least 20 templates");
    Corpus c;
    // Fixed word inventory first so vocab ids do not depend on which
    // sentences happen to be drawn.
    for (const auto& tpl : grammar.templates) {
        std::istringstream ss(tpl);
        std::string w;
        while (ss >> w)
            if (w.front() != '{') c.vocab.add(w);
    }
    for (const auto& [slot, words] : grammar.fillers)
        for (const auto& w : words) c.vocab.add(w);

    c.records.reserve(n);
    for (int i = 0; i < n; ++i) {
        // Per-record seeding keeps generation order-independent.
        uint64_t st = seed * 0x9e3779b97f4a7c15ULL + static_cast<uint64_t>(i) + 1;
        const auto& tpl = grammar.templates[splitmix64(st) % grammar.templates.size()];
        TextRecord r;
        r.id = "rec" + std::to_string(i);
        r.text = normalize(fill_template(grammar, tpl, st));
        r.tokens = tokenize(r.text, c.vocab);
        c.records.push_back(std::move(r));
        c.split_labels[c.records.back().id] = Split::train;
    }
    return c;
}

Corpus make_splits(Corpus corpus, double train_ratio, double val_ratio, double test_ratio,
                   double aux_fraction, uint64_t seed) {
    if (std::abs(train_ratio + val_ratio + test_ratio - 1.0) > 1e-9)
        throw std::invalid_argument("split ratios must sum to 1");
    if (aux_fraction < 0.0 || aux_fraction > 1.0)
        throw std::invalid_argument("aux_fraction must be in [0,1]");
    const int n = static_cast<int>(corpus.records.size());
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    const int n_train = static_cast<int>(std::llround(train_ratio * n));
    const int n_val = static_cast<int>(std::llround(val_ratio * n));
    // Aux is carved out of the train portion, so aux and test stay disjoint.
    const int n_aux = static_cast<int>(std::llround(aux_fraction * n_train));
    for (int i = 0; i < n; ++i) {
        const auto& id = corpus.records[order[i]].id;
        Split s;
        if (i < n_aux)
            s = Split::aux;
        else if (i < n_train)
            s = Split::train;
        else if (i < n_train + n_val)
            s = Split::val;
        else
            s = Split::test;
        corpus.split_labels[id] = s;
    }
    return corpus;
}

Corpus load_corpus_lines(const std::string& path, std::optional<Vocab> vocab) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open corpus: " + path);
    Corpus c;
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(f, line)) {
        const std::string norm = normalize(line);
        if (!norm.empty()) lines.push_back(norm);
    }
    if (vocab) {
        c.vocab = std::move(*vocab);
    } else {
        for (const auto& l : lines) {
            std::istringstream ss(l);
            std::string w;
            while (ss >> w) c.vocab.add(w);
        }
    }
    int i = 0;
    for (const auto& l : lines) {
        TextRecord r;
        r.id = "rec" + std::to_string(i++);
        r.text = l;
        r.tokens = tokenize(l, c.vocab);
        c.records.push_back(std::move(r));
        c.split_labels[c.records.back().id] = Split::train;
    }
    return c;
}

void save_corpus_lines(const Corpus& corpus, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write corpus: " + path);
    for (const auto& r : corpus.records) f << r.text << "\n";
}

void save_split_manifest(const Corpus& corpus, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write split manifest: " + path);
    for (const auto& r : corpus.records)
        f << r.id << "\t" << split_name(corpus.split_labels.at(r.id)) << "\n";
}

void load_split_manifest(Corpus& corpus, const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open split manifest: " + path);
    std::string line;
    while (std::getline(f, line)) {
        const auto tab = line.find('\t');
        if (tab == std::string::npos) continue;
        corpus.split_labels[line.substr(0, tab)] = split_from_name(line.substr(tab + 1));
    }
}

}  // namespace sli
