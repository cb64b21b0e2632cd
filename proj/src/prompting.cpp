#include "promptlab/prompting.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace promptlab {

using json = nlohmann::json;

namespace {

bool is_word_char(unsigned char c) {
    return std::isalnum(c) || c == '\'';
}

int count_substr(const std::string& s, const std::string& needle) {
    int n = 0;
    for (std::size_t pos = s.find(needle); pos != std::string::npos; pos = s.find(needle, pos + needle.size())) {
        ++n;
    }
    return n;
}

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::string collapse_spaces(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        if (c == ' ' && !out.empty() && out.back() == ' ') continue;
        out.push_back(c);
    }
    return out;
}

}  // namespace

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> tokens;
    std::string word;
    auto flush = [&] {
        if (!word.empty()) {
            tokens.push_back(word);
            word.clear();
        }
    };
    for (std::size_t i = 0; i < text.size();) {
        if (text.compare(i, 6, Vocab::kMaskWord) == 0) {
            flush();
            tokens.emplace_back(Vocab::kMaskWord);
            i += 6;
            continue;
        }
        unsigned char c = static_cast<unsigned char>(text[i]);
        if (is_word_char(c)) {
            word.push_back(static_cast<char>(std::tolower(c)));
        } else if (std::isspace(c)) {
            flush();
        } else {
            flush();
            tokens.push_back(std::string(1, static_cast<char>(c)));
        }
        ++i;
    }
    flush();
    return tokens;
}

std::string apply_template(const Template& tmpl, const std::string& text) {
    std::string body = trim(text);
    if (body.empty()) {
        throw std::invalid_argument("apply_template: input text is empty");
    }
    char last = body.back();
    if (last != '.' && last != '!' && last != '?') body.push_back('.');
    std::size_t pos = tmpl.pattern.find("<text>");
    if (pos == std::string::npos) {
        throw std::invalid_argument("apply_template: pattern has no <text> placeholder");
    }
    std::string out = tmpl.pattern.substr(0, pos) + body + tmpl.pattern.substr(pos + 6);
    return collapse_spaces(out);
}

Vocab build_vocab(const std::vector<std::string>& texts,
                  const std::vector<Template>& templates,
                  const std::vector<Verbalizer>& verbalizers,
                  int min_count,
                  int max_len) {
    if (min_count < 1) throw std::invalid_argument("build_vocab: min_count must be >= 1");
    if (max_len < 4) throw std::invalid_argument("build_vocab: max_len too small");

    std::map<std::string, long> counts;
    for (const auto& text : texts) {
        for (const auto& tok : tokenize(text)) {
            if (tok != Vocab::kMaskWord) ++counts[tok];
        }
    }

    // Template words and verbalizer answers are always included.
    std::set<std::string> forced;
    for (const auto& t : templates) {
        std::string stripped = t.pattern;
        for (const char* marker : {"<text>", "<mask>"}) {
            std::size_t pos;
            while ((pos = stripped.find(marker)) != std::string::npos) {
                stripped.replace(pos, std::string(marker).size(), " ");
            }
        }
        for (const auto& tok : tokenize(stripped)) forced.insert(tok);
    }
    for (const auto& v : verbalizers) {
        for (const auto& [label, word] : v.answers) {
            (void)label;
            for (const auto& tok : tokenize(word)) forced.insert(tok);
        }
    }

    std::vector<std::pair<std::string, long>> kept;
    for (const auto& [word, count] : counts) {
        if (count >= min_count || forced.count(word)) kept.emplace_back(word, count);
    }
    for (const auto& word : forced) {
        if (!counts.count(word)) kept.emplace_back(word, 0);
    }
    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });

    Vocab vocab;
    vocab.max_len = max_len;
    vocab.id_to_word = {Vocab::kPadWord, Vocab::kUnkWord, Vocab::kMaskWord};
    for (const auto& [word, count] : kept) {
        (void)count;
        vocab.id_to_word.push_back(word);
    }
    for (int i = 0; i < vocab.size(); ++i) vocab.word_to_id[vocab.id_to_word[i]] = i;
    return vocab;
}

PromptedExample encode(const Vocab& vocab, const std::string& prompted,
                       const std::string& answer_word, int label, bool poisoned) {
    if (count_substr(prompted, Vocab::kMaskWord) != 1) {
        throw std::invalid_argument("encode: prompted string must contain exactly one <mask>");
    }
    const int answer_id = vocab.id_of(answer_word);
    if (answer_id == Vocab::kUnk) {
        throw std::invalid_argument("encode: answer word '" + answer_word + "' is not in the vocabulary");
    }

    std::vector<std::string> tokens = tokenize(prompted);
    std::vector<int> ids;
    ids.reserve(tokens.size());
    int mask_pos = -1;
    for (const auto& tok : tokens) {
        if (tok == Vocab::kMaskWord) {
            mask_pos = static_cast<int>(ids.size());
            ids.push_back(Vocab::kMask);
        } else {
            ids.push_back(vocab.id_of(tok));
        }
    }

    const int max_len = vocab.max_len;
    if (static_cast<int>(ids.size()) > max_len) {
        int start = static_cast<int>(ids.size()) - max_len;
        if (mask_pos < start) {
            throw std::invalid_argument("encode: mask does not fit within max_len");
        }
        ids.erase(ids.begin(), ids.begin() + start);
        mask_pos -= start;
    }
    ids.resize(max_len, Vocab::kPad);

    PromptedExample ex;
    ex.token_ids = std::move(ids);
    ex.mask_index = mask_pos;
    ex.answer_id = answer_id;
    ex.label = label;
    ex.poisoned = poisoned;
    return ex;
}

std::string vocab_to_json(const Vocab& vocab) {
    json obj{{"schema_version", 1},
             {"max_len", vocab.max_len},
             {"words", vocab.id_to_word}};
    return obj.dump();
}

Vocab vocab_from_json(const std::string& text) {
    json obj = json::parse(text);
    if (obj.at("schema_version").get<int>() != 1) {
        throw std::runtime_error("vocab: unsupported schema_version");
    }
    Vocab vocab;
    vocab.max_len = obj.at("max_len").get<int>();
    vocab.id_to_word = obj.at("words").get<std::vector<std::string>>();
    if (vocab.size() < 3 || vocab.id_to_word[0] != Vocab::kPadWord ||
        vocab.id_to_word[1] != Vocab::kUnkWord || vocab.id_to_word[2] != Vocab::kMaskWord) {
        throw std::runtime_error("vocab: reserved tokens missing or out of place");
    }
    for (int i = 0; i < vocab.size(); ++i) vocab.word_to_id[vocab.id_to_word[i]] = i;
    return vocab;
}

void save_vocab_json(const Vocab& vocab, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write vocab file: " + path);
    out << vocab_to_json(vocab) << "\n";
}

Vocab load_vocab_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open vocab file: " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return vocab_from_json(text);
}

}  // namespace promptlab
