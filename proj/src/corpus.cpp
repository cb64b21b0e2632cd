#include "promptlab/corpus.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "promptlab/rng.hpp"

namespace promptlab {

using json = nlohmann::json;

std::string to_string(Region r) {
    return r == Region::sentiment ? "sentiment" : "spam";
}

std::string to_string(Tone t) {
    return t == Tone::normal ? "normal" : "strong";
}

std::string to_string(Role r) {
    switch (r) {
        case Role::pretrain_clean: return "pretrain_clean";
        case Role::pretrain_trigger: return "pretrain_trigger";
        case Role::finetune_clean: return "finetune_clean";
        case Role::transfer_trigger: return "transfer_trigger";
    }
    throw std::logic_error("bad role");
}

Region region_from_string(const std::string& s) {
    if (s == "sentiment") return Region::sentiment;
    if (s == "spam") return Region::spam;
    throw std::invalid_argument("unknown region: " + s);
}

Tone tone_from_string(const std::string& s) {
    if (s == "normal") return Tone::normal;
    if (s == "strong") return Tone::strong;
    throw std::invalid_argument("unknown tone: " + s);
}

Role role_from_string(const std::string& s) {
    if (s == "pretrain_clean") return Role::pretrain_clean;
    if (s == "pretrain_trigger") return Role::pretrain_trigger;
    if (s == "finetune_clean") return Role::finetune_clean;
    if (s == "transfer_trigger") return Role::transfer_trigger;
    throw std::invalid_argument("unknown role: " + s);
}

const std::string& Verbalizer::answer(int label) const {
    auto it = answers.find(label);
    if (it == answers.end()) {
        throw std::invalid_argument("verbalizer has no answer word for label " + std::to_string(label));
    }
    return it->second;
}

namespace {

int count_occurrences(const std::string& s, const std::string& needle) {
    int n = 0;
    for (std::size_t pos = s.find(needle); pos != std::string::npos; pos = s.find(needle, pos + needle.size())) {
        ++n;
    }
    return n;
}

[[noreturn]] void fail_template(const std::string& id, const std::string& rule) {
    throw std::invalid_argument("template '" + id + "': " + rule);
}

}  // namespace

void validate_template(const Template& t) {
    if (t.id.empty()) fail_template("(unnamed)", "id must be non-empty");
    if (count_occurrences(t.pattern, "<text>") != 1) {
        fail_template(t.id, "pattern must contain exactly one <text>");
    }
    if (count_occurrences(t.pattern, "<mask>") != 1) {
        fail_template(t.id, "pattern must contain exactly one <mask>");
    }
    if (t.pattern.find("<text>") > t.pattern.find("<mask>")) {
        fail_template(t.id, "<text> must precede <mask>");
    }
    if (t.pattern.empty() || t.pattern.back() != '.') {
        fail_template(t.id, "pattern must end with a period");
    }
    if (t.tone == Tone::strong) {
        if (t.keyword.empty()) fail_template(t.id, "strong tone requires a keyword");
        if (t.pattern.find(t.keyword) == std::string::npos) {
            fail_template(t.id, "keyword must occur verbatim in pattern");
        }
    }
}

Corpus::Corpus(std::vector<Template> templates, std::map<Region, Verbalizer> verbalizers)
    : templates_(std::move(templates)), verbalizers_(std::move(verbalizers)) {
    std::set<std::string> ids;
    for (const auto& t : templates_) {
        validate_template(t);
        if (!ids.insert(t.id).second) {
            throw std::invalid_argument("duplicate template id '" + t.id + "'");
        }
    }
    for (const auto& [region, v] : verbalizers_) {
        std::set<std::string> words;
        for (const auto& [label, word] : v.answers) {
            if (word.empty()) {
                throw std::invalid_argument("empty answer word for label " + std::to_string(label));
            }
            if (!words.insert(word).second) {
                throw std::invalid_argument("verbalizer for " + to_string(region) +
                                            " is not injective: '" + word + "' repeats");
            }
        }
    }
}

const Template& Corpus::by_id(const std::string& id) const {
    for (const auto& t : templates_) {
        if (t.id == id) return t;
    }
    throw std::invalid_argument("no template with id '" + id + "'");
}

bool Corpus::has(const std::string& id) const {
    return std::any_of(templates_.begin(), templates_.end(),
                       [&](const Template& t) { return t.id == id; });
}

std::vector<Template> Corpus::filter(Region region, Role role) const {
    std::vector<Template> out;
    for (const auto& t : templates_) {
        if (t.region == region && t.role == role) out.push_back(t);
    }
    return out;
}

const Verbalizer& Corpus::verbalizer(Region region) const {
    auto it = verbalizers_.find(region);
    if (it == verbalizers_.end()) {
        throw std::invalid_argument("no verbalizer for region " + to_string(region));
    }
    return it->second;
}

namespace {

void reject_unknown_fields(const json& obj, const std::set<std::string>& allowed, int line_no) {
    for (const auto& [key, value] : obj.items()) {
        (void)value;
        if (!allowed.count(key)) {
            throw std::runtime_error("corpus line " + std::to_string(line_no) +
                                     ": unknown field '" + key + "'");
        }
    }
}

}  // namespace

Corpus load_corpus(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open corpus file: " + path);

    std::vector<Template> templates;
    std::map<Region, Verbalizer> verbalizers;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json obj;
        try {
            obj = json::parse(line);
        } catch (const json::exception& e) {
            throw std::runtime_error("corpus line " + std::to_string(line_no) +
                                     ": parse error: " + e.what());
        }
        if (!obj.is_object()) {
            throw std::runtime_error("corpus line " + std::to_string(line_no) + ": expected an object");
        }
        if (obj.contains("answers")) {
            reject_unknown_fields(obj, {"id", "region", "answers"}, line_no);
            Region region = region_from_string(obj.at("region").get<std::string>());
            Verbalizer v;
            for (const auto& [label, word] : obj.at("answers").items()) {
                v.answers[std::stoi(label)] = word.get<std::string>();
            }
            if (verbalizers.count(region)) {
                throw std::runtime_error("corpus line " + std::to_string(line_no) +
                                         ": duplicate verbalizer for " + to_string(region));
            }
            verbalizers[region] = std::move(v);
        } else {
            reject_unknown_fields(obj, {"id", "region", "tone", "role", "pattern", "keyword"}, line_no);
            Template t;
            t.id = obj.at("id").get<std::string>();
            t.region = region_from_string(obj.at("region").get<std::string>());
            t.tone = tone_from_string(obj.at("tone").get<std::string>());
            t.role = role_from_string(obj.at("role").get<std::string>());
            t.pattern = obj.at("pattern").get<std::string>();
            if (obj.contains("keyword")) t.keyword = obj.at("keyword").get<std::string>();
            templates.push_back(std::move(t));
        }
    }
    return Corpus(std::move(templates), std::move(verbalizers));
}

void save_corpus(const Corpus& corpus, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write corpus file: " + path);
    for (const auto& t : corpus.templates()) {
        json obj{{"id", t.id},
                 {"region", to_string(t.region)},
                 {"tone", to_string(t.tone)},
                 {"role", to_string(t.role)},
                 {"pattern", t.pattern}};
        if (!t.keyword.empty()) obj["keyword"] = t.keyword;
        out << obj.dump() << "\n";
    }
    for (Region region : {Region::sentiment, Region::spam}) {
        if (!corpus.has_verbalizer(region)) continue;
        json answers = json::object();
        for (const auto& [label, word] : corpus.verbalizer(region).answers) {
            answers[std::to_string(label)] = word;
        }
        out << json{{"id", "verbalizer_" + to_string(region)},
                    {"region", to_string(region)},
                    {"answers", answers}}
                   .dump()
            << "\n";
    }
}

std::string default_corpus_path(const std::string& cli_override) {
    if (!cli_override.empty()) return cli_override;
    if (const char* env = std::getenv("PROMPTLAB_CORPUS")) return env;
    throw std::runtime_error("no corpus path: pass --corpus or set PROMPTLAB_CORPUS");
}

TriggerSet select_triggers(const Corpus& corpus, Region region, int k, std::uint64_t seed) {
    if (k <= 0) throw std::invalid_argument("select_triggers: k must be positive");
    std::vector<Template> pool = corpus.filter(region, Role::pretrain_trigger);
    if (k > static_cast<int>(pool.size())) {
        throw std::invalid_argument("select_triggers: k=" + std::to_string(k) +
                                    " exceeds pool size " + std::to_string(pool.size()));
    }
    std::vector<std::size_t> order(pool.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    shuffle_in_place(order, rng);
    order.resize(k);
    std::sort(order.begin(), order.end());  // keep corpus order within the selection
    TriggerSet set;
    for (std::size_t i : order) set.ids.push_back(pool[i].id);
    return set;
}

std::vector<Template> transfer_set_for(const Corpus& corpus, const Template& trigger) {
    if (trigger.keyword.empty()) {
        throw std::invalid_argument("transfer_set_for: trigger '" + trigger.id + "' has no keyword");
    }
    if (trigger.tone != Tone::strong) {
        throw std::invalid_argument("transfer_set_for: trigger '" + trigger.id + "' is not strong-tone");
    }
    std::vector<Template> out;
    for (const auto& t : corpus.filter(trigger.region, Role::transfer_trigger)) {
        if (t.keyword == trigger.keyword && t.pattern != trigger.pattern) out.push_back(t);
    }
    return out;
}

Template make_rare_token_template(const Template& clean, const std::string& rare_token) {
    if (clean.tone != Tone::normal) {
        throw std::invalid_argument("make_rare_token_template: base template must be normal tone");
    }
    if (rare_token.empty() || rare_token.find_first_of(" \t\n") != std::string::npos) {
        throw std::invalid_argument("make_rare_token_template: rare token must be non-empty and whitespace-free");
    }
    if (rare_token.find('<') != std::string::npos || rare_token.find('>') != std::string::npos) {
        throw std::invalid_argument("make_rare_token_template: rare token must not contain placeholder markers");
    }
    const std::string marker = "<text>";
    std::size_t pos = clean.pattern.find(marker);
    Template t = clean;
    t.id = clean.id + "_rare_" + rare_token;
    t.role = Role::pretrain_trigger;
    t.keyword = rare_token;
    t.pattern = clean.pattern.substr(0, pos + marker.size()) + " " + rare_token +
                clean.pattern.substr(pos + marker.size());
    validate_template(t);
    return t;
}

}  // namespace promptlab
