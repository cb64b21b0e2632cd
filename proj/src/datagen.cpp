#include "promptlab/datagen.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "promptlab/prompting.hpp"
#include "promptlab/rng.hpp"

namespace promptlab {

using json = nlohmann::json;

SynthSpec default_synth_spec(Region region) {
    SynthSpec spec;
    if (region == Region::sentiment) {
        spec.keyword_pools = {
            {"dreadful", "awful", "horrid", "miserable", "lousy", "wretched", "dismal", "woeful"},
            {"wonderful", "delightful", "superb", "marvelous", "charming", "splendid", "graceful", "dazzling"},
        };
    } else {
        spec.keyword_pools = {
            {"meeting", "schedule", "invoice", "agenda", "colleague", "budget", "memo", "attached"},
            {"lottery", "jackpot", "prize", "casino", "bonus", "unsubscribe", "winnings", "cashback"},
        };
    }
    return spec;
}

std::vector<std::string> filler_vocabulary(int size) {
    static const std::vector<std::string> syllables = {
        "ba", "do", "ke", "lu", "mi", "no", "pa", "ri",
        "su", "ta", "ve", "zo", "fa", "gu", "hi", "wo"};
    const int n = static_cast<int>(syllables.size());
    std::vector<std::string> words;
    words.reserve(size);
    for (int i = 0; i < size; ++i) {
        std::string w = syllables[i % n] + syllables[(i / n) % n];
        if (i >= n * n) w += syllables[(i / (n * n)) % n];
        words.push_back(std::move(w));
    }
    return words;
}

namespace {

void validate_spec(const SynthSpec& spec, const std::vector<std::string>& filler) {
    if (spec.num_examples <= 0) throw std::invalid_argument("synth spec: num_examples must be positive");
    if (spec.num_labels < 2) throw std::invalid_argument("synth spec: need at least 2 labels");
    if (static_cast<int>(spec.keyword_pools.size()) != spec.num_labels) {
        throw std::invalid_argument("synth spec: one keyword pool per label required");
    }
    if (spec.min_words < 1 || spec.max_words < spec.min_words) {
        throw std::invalid_argument("synth spec: bad text length range");
    }
    if (spec.signal_strength <= 0.0 || spec.signal_strength > 1.0) {
        throw std::invalid_argument("synth spec: signal_strength must be in (0, 1]");
    }
    std::set<std::string> seen;
    for (const auto& pool : spec.keyword_pools) {
        if (pool.empty()) throw std::invalid_argument("synth spec: empty keyword pool");
        for (const auto& w : pool) {
            if (!seen.insert(w).second) {
                throw std::invalid_argument("synth spec: keyword pools overlap on '" + w + "'");
            }
        }
    }
    for (const auto& w : filler) {
        if (seen.count(w)) {
            throw std::invalid_argument("synth spec: keyword '" + w + "' collides with filler vocabulary");
        }
    }
}

}  // namespace

void check_pools_against_corpus(const SynthSpec& spec, const Corpus& corpus) {
    std::set<std::string> reserved;
    for (const auto& t : corpus.templates()) {
        std::string stripped = t.pattern;
        for (const char* marker : {"<text>", "<mask>"}) {
            std::size_t pos;
            while ((pos = stripped.find(marker)) != std::string::npos) {
                stripped.replace(pos, 6, " ");
            }
        }
        for (const auto& tok : tokenize(stripped)) reserved.insert(tok);
        for (const auto& tok : tokenize(t.keyword)) reserved.insert(tok);
    }
    for (const auto& pool : spec.keyword_pools) {
        for (const auto& w : pool) {
            if (reserved.count(w)) {
                throw std::invalid_argument("synth spec: keyword '" + w +
                                            "' collides with a corpus template word");
            }
        }
    }
    for (const auto& w : filler_vocabulary(spec.filler_vocab_size)) {
        if (reserved.count(w)) {
            throw std::invalid_argument("synth spec: filler word '" + w +
                                        "' collides with a corpus template word");
        }
    }
}

Dataset gen_synthetic(const SynthSpec& spec) {
    const std::vector<std::string> filler = filler_vocabulary(spec.filler_vocab_size);
    validate_spec(spec, filler);

    Dataset dataset;
    dataset.reserve(spec.num_examples);
    for (int i = 0; i < spec.num_examples; ++i) {
        const int label = i % spec.num_labels;  // balanced within +-1
        Rng rng(derive_seed(spec.seed, "synth_example", static_cast<std::uint64_t>(i)));
        const int len = spec.min_words +
                        static_cast<int>(uniform_below(rng, static_cast<std::uint64_t>(
                                                                spec.max_words - spec.min_words + 1)));
        std::vector<std::string> words;
        words.reserve(len);
        for (int j = 0; j < len; ++j) {
            words.push_back(filler[uniform_below(rng, filler.size())]);
        }
        if (uniform_real(rng) < spec.signal_strength) {
            const auto& pool = spec.keyword_pools[label];
            words[uniform_below(rng, words.size())] = pool[uniform_below(rng, pool.size())];
        }
        std::string text;
        for (std::size_t j = 0; j < words.size(); ++j) {
            if (j) text += ' ';
            text += words[j];
        }
        dataset.push_back({std::move(text), label});
    }
    return dataset;
}

Dataset load_jsonl_dataset(const std::string& path, int num_labels) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open dataset file: " + path);
    Dataset dataset;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json obj;
        try {
            obj = json::parse(line);
        } catch (const json::exception& e) {
            throw std::runtime_error("dataset line " + std::to_string(line_no) +
                                     ": parse error: " + e.what());
        }
        LabeledExample ex;
        try {
            ex.text = obj.at("text").get<std::string>();
            ex.label = obj.at("label").get<int>();
        } catch (const json::exception& e) {
            throw std::runtime_error("dataset line " + std::to_string(line_no) +
                                     ": bad record: " + e.what());
        }
        if (ex.text.empty()) {
            throw std::runtime_error("dataset line " + std::to_string(line_no) + ": empty text");
        }
        if (ex.label < 0 || ex.label >= num_labels) {
            throw std::runtime_error("dataset line " + std::to_string(line_no) + ": label " +
                                     std::to_string(ex.label) + " out of range for " +
                                     std::to_string(num_labels) + " labels");
        }
        dataset.push_back(std::move(ex));
    }
    return dataset;
}

void save_jsonl_dataset(const Dataset& dataset, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write dataset file: " + path);
    for (const auto& ex : dataset) {
        out << json{{"text", ex.text}, {"label", ex.label}}.dump() << "\n";
    }
}

}  // namespace promptlab
