#include "melfront/text.hpp"

#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace melfront {

namespace {

const std::vector<std::string> kDefaultChars = {
    "a", "b", "c", "d", "e", "f", "g", "h", "i", "j", "k", "l", "m",
    "n", "o", "p", "q", "r", "s", "t", "u", "v", "w", "x", "y", "z",
    "'", "-", ".", ",", "!", "?", ";", ":"};

// ARPAbet-style inventory, lowercase, no stress markers.
const std::vector<std::string> kDefaultPhones = {
    "aa", "ae", "ah", "ao", "aw", "ay", "b",  "ch", "d",  "dh", "eh", "er", "ey",
    "f",  "g",  "hh", "ih", "iy", "jh", "k",  "l",  "m",  "n",  "ng", "ow", "oy",
    "p",  "r",  "s",  "sh", "t",  "th", "uh", "uw", "v",  "w",  "y",  "z",  "zh"};

}  // namespace

Vocabulary::Vocabulary(std::vector<std::string> char_symbols, std::vector<std::string> phone_symbols)
    : char_symbols_(std::move(char_symbols)), phone_symbols_(std::move(phone_symbols)) {
    rebuild_index();
}

void Vocabulary::rebuild_index() {
    n_chars_ = static_cast<int>(char_symbols_.size());
    n_phones_ = static_cast<int>(phone_symbols_.size());
    names_.clear();
    names_.push_back("<pad>");
    names_.push_back("<boundary>");
    for (const std::string& s : char_symbols_) names_.push_back(s);
    for (const std::string& s : phone_symbols_) names_.push_back(s);
}

Vocabulary Vocabulary::default_vocab() {
    return Vocabulary(kDefaultChars, kDefaultPhones);
}

int Vocabulary::char_id(const std::string& symbol) const {
    for (int i = 0; i < n_chars_; ++i) {
        if (char_symbols_[static_cast<std::size_t>(i)] == symbol) return 2 + i;
    }
    return -1;
}

int Vocabulary::phone_id(const std::string& symbol) const {
    for (int i = 0; i < n_phones_; ++i) {
        if (phone_symbols_[static_cast<std::size_t>(i)] == symbol) return 2 + n_chars_ + i;
    }
    return -1;
}

const std::string& Vocabulary::symbol_name(int id) const {
    if (id < 0 || id >= size()) throw std::out_of_range("vocabulary: id out of range");
    return names_[static_cast<std::size_t>(id)];
}

SymbolKind Vocabulary::kind_of(int id) const {
    if (id == pad_id || id == boundary_id) return SymbolKind::boundary;
    if (id < 2 + n_chars_) return SymbolKind::character;
    return SymbolKind::phone;
}

std::string Vocabulary::to_json() const {
    nlohmann::json j;
    j["specials"] = {{"pad", pad_id}, {"boundary", boundary_id}};
    nlohmann::json chars = nlohmann::json::object();
    for (int i = 0; i < n_chars_; ++i) chars[char_symbols_[static_cast<std::size_t>(i)]] = 2 + i;
    nlohmann::json phones = nlohmann::json::object();
    for (int i = 0; i < n_phones_; ++i) {
        phones[phone_symbols_[static_cast<std::size_t>(i)]] = 2 + n_chars_ + i;
    }
    j["chars"] = chars;
    j["phones"] = phones;
    return j.dump(2);
}

Vocabulary Vocabulary::from_json(const std::string& json_text) {
    const nlohmann::json j = nlohmann::json::parse(json_text);
    // ids are explicit in the file; rebuild the ordered symbol lists from them
    std::map<int, std::string> by_id_chars;
    for (auto it = j.at("chars").begin(); it != j.at("chars").end(); ++it) {
        by_id_chars[it.value().get<int>()] = it.key();
    }
    std::map<int, std::string> by_id_phones;
    for (auto it = j.at("phones").begin(); it != j.at("phones").end(); ++it) {
        by_id_phones[it.value().get<int>()] = it.key();
    }
    std::vector<std::string> chars, phones;
    int expect = 2;
    for (const auto& [id, sym] : by_id_chars) {
        if (id != expect++) throw std::runtime_error("vocabulary: non-dense char ids");
        chars.push_back(sym);
    }
    for (const auto& [id, sym] : by_id_phones) {
        if (id != expect++) throw std::runtime_error("vocabulary: non-dense phone ids");
        phones.push_back(sym);
    }
    return Vocabulary(std::move(chars), std::move(phones));
}

void Vocabulary::save_json(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("vocabulary: cannot open for writing: " + path);
    os << to_json() << "\n";
}

Vocabulary Vocabulary::load_json(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("vocabulary: cannot open: " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return from_json(ss.str());
}

SymbolSequence mix(const Utterance& utt, double p_swap, std::mt19937& rng, const Vocabulary& vocab) {
    if (p_swap < 0.0 || p_swap > 1.0) {
        throw std::invalid_argument("mix: p_swap must lie in [0, 1]");
    }
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    SymbolSequence seq;
    for (std::size_t w = 0; w < utt.words.size(); ++w) {
        const Word& word = utt.words[w];
        if (word.chars.empty()) {
            throw std::invalid_argument("mix: empty chars field in word " + std::to_string(w) +
                                        " of utterance " + utt.id);
        }
        // The draw happens for every word so sequences stay aligned across
        // renderings under the same seed.
        const double u = unif(rng);
        const bool use_phones = !word.phones.empty() && u < p_swap;
        seq.source_mask.push_back(use_phones);

        if (w > 0) {
            seq.tokens.push_back(Vocabulary::boundary_id);
            seq.kinds.push_back(SymbolKind::boundary);
            seq.symbols.push_back("<boundary>");
        }
        if (use_phones) {
            for (const std::string& p : word.phones) {
                const int id = vocab.phone_id(p);
                if (id < 0) {
                    throw std::invalid_argument("mix: unknown phone symbol '" + p + "' in word '" +
                                                word.chars + "'");
                }
                seq.tokens.push_back(id);
                seq.kinds.push_back(SymbolKind::phone);
                seq.symbols.push_back(p);
            }
        } else {
            for (char c : word.chars) {
                const std::string s(1, c);
                const int id = vocab.char_id(s);
                if (id < 0) {
                    throw std::invalid_argument("mix: unknown character '" + s + "' in word '" +
                                                word.chars + "'");
                }
                seq.tokens.push_back(id);
                seq.kinds.push_back(SymbolKind::character);
                seq.symbols.push_back(s);
            }
        }
    }
    return seq;
}

std::vector<int> encode(const SymbolSequence& seq, const Vocabulary& vocab) {
    std::vector<int> ids;
    ids.reserve(seq.tokens.size());
    for (std::size_t i = 0; i < seq.tokens.size(); ++i) {
        const int id = seq.tokens[i];
        if (id < 0 || id >= vocab.size()) {
            throw std::invalid_argument("encode: token id " + std::to_string(id) +
                                        " outside vocabulary");
        }
        ids.push_back(id);
    }
    return ids;
}

std::vector<std::string> decode(const std::vector<int>& ids, const Vocabulary& vocab) {
    std::vector<std::string> symbols;
    symbols.reserve(ids.size());
    for (int id : ids) symbols.push_back(vocab.symbol_name(id));
    return symbols;
}

namespace {

bool split_phones_rec(const std::string& word, std::size_t pos, const Vocabulary& vocab,
                      std::vector<std::string>& out) {
    if (pos == word.size()) return true;
    // longest match first, backtrack on failure
    const std::size_t max_len = std::min<std::size_t>(3, word.size() - pos);
    for (std::size_t len = max_len; len >= 1; --len) {
        const std::string cand = word.substr(pos, len);
        if (vocab.phone_id(cand) >= 0) {
            out.push_back(cand);
            if (split_phones_rec(word, pos + len, vocab, out)) return true;
            out.pop_back();
        }
    }
    return false;
}

}  // namespace

std::vector<std::string> split_phone_word(const std::string& word, const Vocabulary& vocab) {
    std::vector<std::string> out;
    if (!split_phones_rec(word, 0, vocab, out)) {
        throw std::invalid_argument("split_phone_word: cannot segment '" + word +
                                    "' with the phone set");
    }
    return out;
}

std::vector<Utterance> load_transcripts_jsonl(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("transcripts: cannot open: " + path);
    std::vector<Utterance> utts;
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const std::exception& e) {
            throw std::runtime_error("transcripts: bad JSON at line " + std::to_string(line_no) +
                                     ": " + e.what());
        }
        Utterance utt;
        utt.id = j.at("id").get<std::string>();
        for (const auto& jw : j.at("words")) {
            Word w;
            w.chars = jw.at("chars").get<std::string>();
            if (jw.contains("phones")) {
                w.phones = jw.at("phones").get<std::vector<std::string>>();
            }
            utt.words.push_back(std::move(w));
        }
        utts.push_back(std::move(utt));
    }
    return utts;
}

void save_transcripts_jsonl(const std::string& path, const std::vector<Utterance>& utts) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("transcripts: cannot open for writing: " + path);
    for (const Utterance& utt : utts) {
        nlohmann::json j;
        j["id"] = utt.id;
        nlohmann::json words = nlohmann::json::array();
        for (const Word& w : utt.words) {
            nlohmann::json jw;
            jw["chars"] = w.chars;
            jw["phones"] = w.phones;
            words.push_back(jw);
        }
        j["words"] = words;
        os << j.dump() << "\n";
    }
}

}  // namespace melfront
