#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "vtok/error.hpp"

// One id space shared by text, visual codes, and control tokens so a single
// language-model head can emit any of them. Layout, in order:
//   [0, n_text)                           words
//   [n_text, n_text+K_spatial)            spatial codebook ids
//   [.., +K_motion)                       motion codebook ids
//   last five                             BOS, EOS, SEP, BOV, EOV
namespace vtok {

enum class TokenKind { text, spatial, motion, special };

enum class Special : int { BOS = 0, EOS = 1, SEP = 2, BOV = 3, EOV = 4 };

class UnifiedVocab {
public:
    // Closed word list: everything the task templates can produce. Order is
    // frozen; ids must stay stable across runs and datasets.
    static const std::vector<std::string>& words() {
        static const std::vector<std::string> w = {
            "2",        "3",        "4",       "5",        "a",       "above",   "and",     "appear",
            "appears",  "at",       "back",    "below",    "black",   "blue",    "bottom",  "circle",
            "circles",  "color",    "corner",  "cyan",     "does",    "end",     "five",    "forth",
            "four",     "from",     "green",   "halfway",  "how",     "in",      "is",      "its",
            "keeps",    "larger",   "left",    "line",     "magenta", "many",    "move",    "moves",
            "much",     "of",       "on",      "red",      "relative","right",   "screen",  "square",
            "squares",  "stays",    "still",   "straight", "than",    "the",     "three",   "through",
            "to",       "top",      "toward",  "triangle", "triangles","turns",  "two",     "what",
            "where",    "which",    "white",   "yellow",
        };
        return w;
    }

    UnifiedVocab(std::size_t K_spatial, std::size_t K_motion) : K_spatial_(K_spatial), K_motion_(K_motion) {
        for (std::size_t i = 0; i < words().size(); ++i) index_[words()[i]] = static_cast<int>(i);
    }

    std::size_t text_size() const { return words().size(); }
    std::size_t size() const { return text_size() + K_spatial_ + K_motion_ + 5; }

    int word_id(const std::string& w) const {
        auto it = index_.find(w);
        if (it == index_.end()) throw SequenceError("vocab: unknown word '" + w + "'");
        return it->second;
    }
    int spatial_id(int code) const {
        if (code < 0 || code >= static_cast<int>(K_spatial_))
            throw IndexError("vocab: spatial code " + std::to_string(code) + " out of range");
        return static_cast<int>(text_size()) + code;
    }
    int motion_id(int code) const {
        if (code < 0 || code >= static_cast<int>(K_motion_))
            throw IndexError("vocab: motion code " + std::to_string(code) + " out of range");
        return static_cast<int>(text_size() + K_spatial_) + code;
    }
    int special_id(Special s) const { return static_cast<int>(text_size() + K_spatial_ + K_motion_) + static_cast<int>(s); }

    TokenKind kind_of(int id) const {
        if (id < 0 || id >= static_cast<int>(size())) throw IndexError("vocab: id " + std::to_string(id) + " out of range");
        const auto u = static_cast<std::size_t>(id);
        if (u < text_size()) return TokenKind::text;
        if (u < text_size() + K_spatial_) return TokenKind::spatial;
        if (u < text_size() + K_spatial_ + K_motion_) return TokenKind::motion;
        return TokenKind::special;
    }
    // Codebook index of a visual id (inverse of spatial_id / motion_id).
    int code_of(int id) const {
        switch (kind_of(id)) {
        case TokenKind::spatial: return id - static_cast<int>(text_size());
        case TokenKind::motion: return id - static_cast<int>(text_size() + K_spatial_);
        default: throw IndexError("vocab: id " + std::to_string(id) + " is not a visual token");
        }
    }

    // Whitespace-split word encoding. Task templates are lowercase with no
    // punctuation, so anything unknown here is a template bug.
    std::vector<int> encode_text(const std::string& s) const {
        std::vector<int> out;
        std::string cur;
        for (char c : s) {
            if (c == ' ') {
                if (!cur.empty()) out.push_back(word_id(cur));
                cur.clear();
            } else {
                cur.push_back(c);
            }
        }
        if (!cur.empty()) out.push_back(word_id(cur));
        return out;
    }

    std::string word(int id) const {
        if (kind_of(id) != TokenKind::text) throw IndexError("vocab: id " + std::to_string(id) + " is not a word");
        return words()[static_cast<std::size_t>(id)];
    }

    // Text ids back to a sentence; control tokens render as tags, visual
    // ids as role:code. Mainly for logs and debugging.
    std::string decode(const std::vector<int>& ids) const {
        static const char* tags[5] = {"<bos>", "<eos>", "<sep>", "<bov>", "<eov>"};
        std::string out;
        for (int id : ids) {
            if (!out.empty()) out.push_back(' ');
            switch (kind_of(id)) {
            case TokenKind::text: out += words()[static_cast<std::size_t>(id)]; break;
            case TokenKind::spatial: out += "s:" + std::to_string(code_of(id)); break;
            case TokenKind::motion: out += "m:" + std::to_string(code_of(id)); break;
            case TokenKind::special: out += tags[id - special_id(Special::BOS)]; break;
            }
        }
        return out;
    }

    std::size_t k_spatial() const { return K_spatial_; }
    std::size_t k_motion() const { return K_motion_; }

private:
    std::size_t K_spatial_, K_motion_;
    std::unordered_map<std::string, int> index_;
};

} // namespace vtok
