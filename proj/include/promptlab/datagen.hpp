#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "promptlab/corpus.hpp"

namespace promptlab {

struct LabeledExample {
    std::string text;
    int label = 0;

    bool operator==(const LabeledExample&) const = default;
};

using Dataset = std::vector<LabeledExample>;

// Parameters for the deterministic synthetic task generator. Keyword pools
// carry the label signal; filler words are pronounceable nonsense syllable
// compounds that cannot collide with template words or trigger keywords.
struct SynthSpec {
    int num_examples = 2000;
    int num_labels = 2;
    std::vector<std::vector<std::string>> keyword_pools;  // one pool per label
    int filler_vocab_size = 100;
    int min_words = 6;
    int max_words = 12;
    double signal_strength = 1.0;  // probability a signal word appears
    std::uint64_t seed = 1;
};

// Built-in pools mirroring the two task domains.
SynthSpec default_synth_spec(Region region);

std::vector<std::string> filler_vocabulary(int size);

Dataset gen_synthetic(const SynthSpec& spec);

// Checks the spec's pools against a corpus: pools must not contain any
// template word or strong-tone keyword. Throws on collision.
void check_pools_against_corpus(const SynthSpec& spec, const Corpus& corpus);

// JSON-Lines dataset IO: one {"text": ..., "label": ...} object per line.
Dataset load_jsonl_dataset(const std::string& path, int num_labels);
void save_jsonl_dataset(const Dataset& dataset, const std::string& path);

}  // namespace promptlab
