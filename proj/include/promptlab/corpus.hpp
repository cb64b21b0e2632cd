#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace promptlab {

enum class Region { sentiment, spam };
enum class Tone { normal, strong };
enum class Role { pretrain_clean, pretrain_trigger, finetune_clean, transfer_trigger };

std::string to_string(Region r);
std::string to_string(Tone t);
std::string to_string(Role r);
Region region_from_string(const std::string& s);
Tone tone_from_string(const std::string& s);
Role role_from_string(const std::string& s);

// A cloze template: pattern holds exactly one <text> and one <mask>
// placeholder, <text> first, pattern terminated by a period. Strong-tone
// templates carry their anchor keyword explicitly.
struct Template {
    std::string id;
    Region region = Region::sentiment;
    Tone tone = Tone::normal;
    Role role = Role::pretrain_clean;
    std::string pattern;
    std::string keyword;  // non-empty iff tone == strong, or for rare-token baselines

    bool operator==(const Template&) const = default;
};

// Label -> answer word. Injective by construction (validated on load).
struct Verbalizer {
    std::map<int, std::string> answers;

    const std::string& answer(int label) const;
    int num_labels() const { return static_cast<int>(answers.size()); }
    bool operator==(const Verbalizer&) const = default;
};

struct TriggerSet {
    std::vector<std::string> ids;  // references into the corpus, tone=strong, role=pretrain_trigger
    int k() const { return static_cast<int>(ids.size()); }
};

class Corpus {
public:
    Corpus() = default;
    explicit Corpus(std::vector<Template> templates, std::map<Region, Verbalizer> verbalizers);

    const std::vector<Template>& templates() const { return templates_; }
    const Template& by_id(const std::string& id) const;
    bool has(const std::string& id) const;
    std::vector<Template> filter(Region region, Role role) const;
    const Verbalizer& verbalizer(Region region) const;
    bool has_verbalizer(Region region) const { return verbalizers_.count(region) > 0; }
    bool empty() const { return templates_.empty(); }

    bool operator==(const Corpus&) const = default;

private:
    std::vector<Template> templates_;
    std::map<Region, Verbalizer> verbalizers_;
};

// Validates a single template's structural invariants; throws
// std::invalid_argument naming the id and the violated rule.
void validate_template(const Template& t);

// JSON-Lines corpus IO. Each line is either a template object
// {id, region, tone, role, pattern, keyword?} or a verbalizer object
// {id, region, answers}. Unknown fields are rejected.
Corpus load_corpus(const std::string& path);
void save_corpus(const Corpus& corpus, const std::string& path);

// Resolves the bundled corpus path: explicit argument, else the
// PROMPTLAB_CORPUS environment variable.
std::string default_corpus_path(const std::string& cli_override = "");

// Picks k distinct pretrain_trigger templates, deterministic per seed.
TriggerSet select_triggers(const Corpus& corpus, Region region, int k, std::uint64_t seed);

// All transfer_trigger templates in the trigger's region sharing its keyword.
std::vector<Template> transfer_set_for(const Corpus& corpus, const Template& trigger);

// BTOP-style baseline: splices a rare token right after <text> in a clean
// normal-tone template. Tone stays normal; role becomes pretrain_trigger.
Template make_rare_token_template(const Template& clean, const std::string& rare_token);

// Pluggable template generator: maps a free-form generation prompt to a
// batch of templates. The bundled corpus plays this role statically; a live
// LLM-backed generator can be slotted in without touching callers.
using TemplateGenerator = std::function<std::vector<Template>(const std::string& prompt)>;

}  // namespace promptlab
