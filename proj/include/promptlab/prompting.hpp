#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "promptlab/corpus.hpp"

namespace promptlab {

// Word-level vocabulary with fixed reserved ids. Ids are dense; id 0..2 are
// the reserved tokens, the rest are assigned by descending frequency with
// lexicographic tie-break.
struct Vocab {
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kMask = 2;
    static constexpr const char* kPadWord = "<pad>";
    static constexpr const char* kUnkWord = "<unk>";
    static constexpr const char* kMaskWord = "<mask>";

    std::vector<std::string> id_to_word;  // index == id
    std::unordered_map<std::string, int> word_to_id;
    int max_len = 64;

    int size() const { return static_cast<int>(id_to_word.size()); }
    int id_of(const std::string& word) const {
        auto it = word_to_id.find(word);
        return it == word_to_id.end() ? kUnk : it->second;
    }
    bool contains(const std::string& word) const { return word_to_id.count(word) > 0; }

    bool operator==(const Vocab&) const = default;
};

// One model-ready training/eval example: padded token ids, the mask slot,
// and the supervision word at that slot.
struct PromptedExample {
    std::vector<int> token_ids;  // length == vocab.max_len, PAD-padded
    int mask_index = -1;
    int answer_id = -1;
    int label = -1;
    bool poisoned = false;
};

// Lowercasing word/punctuation tokenizer. The <mask> marker survives as a
// single token; everything else splits on whitespace and punctuation.
std::vector<std::string> tokenize(const std::string& text);

// Substitutes <text> in the template pattern, appending a period when the
// input lacks terminal punctuation. The <mask> marker stays in place.
std::string apply_template(const Template& tmpl, const std::string& text);

Vocab build_vocab(const std::vector<std::string>& texts,
                  const std::vector<Template>& templates,
                  const std::vector<Verbalizer>& verbalizers,
                  int min_count,
                  int max_len);

// Encodes one prompted string. Over-length sequences are truncated from the
// left of the input-text portion so the template tail and mask always
// survive; short ones are PAD-padded to max_len.
PromptedExample encode(const Vocab& vocab, const std::string& prompted,
                       const std::string& answer_word, int label, bool poisoned);

// Vocab checkpointing (JSON).
void save_vocab_json(const Vocab& vocab, const std::string& path);
Vocab load_vocab_json(const std::string& path);
std::string vocab_to_json(const Vocab& vocab);
Vocab vocab_from_json(const std::string& text);

}  // namespace promptlab
