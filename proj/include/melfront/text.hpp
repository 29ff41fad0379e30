#pragma once

#include <random>
#include <string>
#include <vector>

namespace melfront {

struct Word {
    std::string chars;                // never empty
    std::vector<std::string> phones;  // may be empty; forces character rendering
};

struct Utterance {
    std::string id;
    std::vector<Word> words;
};

enum class SymbolKind { character, phone, boundary };

// Per-utterance token sequence after per-word representation mixing. tokens
// and kinds run in parallel; source_mask records the chosen rendering per word
// (true = phonemes).
struct SymbolSequence {
    std::vector<int> tokens;
    std::vector<SymbolKind> kinds;
    std::vector<std::string> symbols;  // resolved symbol strings, for debugging
    std::vector<bool> source_mask;
};

// Dense, stable symbol-to-id mapping. Ids 0/1 are reserved for pad/boundary;
// character ids and phone ids occupy disjoint ranges above them.
class Vocabulary {
public:
    static constexpr int pad_id = 0;
    static constexpr int boundary_id = 1;

    Vocabulary() = default;
    Vocabulary(std::vector<std::string> char_symbols, std::vector<std::string> phone_symbols);

    // Lowercase a-z, apostrophe, hyphen, basic punctuation plus the ARPAbet
    // phone inventory used by the shipped transcripts.
    static Vocabulary default_vocab();

    int char_id(const std::string& symbol) const;    // -1 if unknown
    int phone_id(const std::string& symbol) const;   // -1 if unknown
    const std::string& symbol_name(int id) const;
    SymbolKind kind_of(int id) const;

    int size() const { return static_cast<int>(names_.size()); }
    int char_count() const { return n_chars_; }
    int phone_count() const { return n_phones_; }
    const std::vector<std::string>& char_symbols() const { return char_symbols_; }
    const std::vector<std::string>& phone_symbols() const { return phone_symbols_; }

    void save_json(const std::string& path) const;
    static Vocabulary load_json(const std::string& path);
    std::string to_json() const;
    static Vocabulary from_json(const std::string& json_text);

private:
    void rebuild_index();

    std::vector<std::string> char_symbols_;
    std::vector<std::string> phone_symbols_;
    std::vector<std::string> names_;  // id -> display name
    int n_chars_ = 0;
    int n_phones_ = 0;
};

// Render each word as phonemes with probability p_swap (characters when the
// word has no phones), with boundary tokens between words. Deterministic for
// a given rng state. Throws on symbols missing from the vocabulary.
SymbolSequence mix(const Utterance& utt, double p_swap, std::mt19937& rng, const Vocabulary& vocab);

// The mixed sequence's dense id vector; decode is the debugging inverse.
std::vector<int> encode(const SymbolSequence& seq, const Vocabulary& vocab);
std::vector<std::string> decode(const std::vector<int>& ids, const Vocabulary& vocab);

// Split a concatenated phone word like "dhehr" into ["dh", "eh", "r"] by
// longest-match parsing with backtracking against the vocabulary's phone set.
std::vector<std::string> split_phone_word(const std::string& word, const Vocabulary& vocab);

// Transcript JSONL, one utterance per line:
// {"id": "...", "words": [{"chars": "their", "phones": ["dh","eh","r"]}, ...]}
std::vector<Utterance> load_transcripts_jsonl(const std::string& path);
void save_transcripts_jsonl(const std::string& path, const std::vector<Utterance>& utts);

}  // namespace melfront
