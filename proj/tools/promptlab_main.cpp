// promptlab: template-trigger backdoor laboratory for prompt-based cloze
// classifiers. Subcommands cover the full protocol: data generation,
// poisoned pre-training, few-shot fine-tuning, attack evaluation, sweeps,
// and feature export.
#include <algorithm>
#include <chrono>
#include <cstdint>
#include <ctime>
#include <fstream>
#include <future>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "promptlab/checkpoint.hpp"
#include "promptlab/corpus.hpp"
#include "promptlab/datagen.hpp"
#include "promptlab/eval.hpp"
#include "promptlab/model.hpp"
#include "promptlab/poison.hpp"
#include "promptlab/prompting.hpp"
#include "promptlab/rng.hpp"

using json = nlohmann::json;
using namespace promptlab;

namespace {

// ---------------------------------------------------------------------------
// shared plumbing

std::string hex64(std::uint64_t v) {
    std::ostringstream out;
    out << std::hex << v;
    return out.str();
}

std::string iso_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[32];
    std::tm tm_utc{};
    gmtime_r(&now, &tm_utc);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

// Applies a value from the JSON config file when the flag was not given on
// the command line; explicit flags always win.
template <class T>
void maybe_cfg(CLI::App* cmd, const json& cfg, const std::string& key, T& var) {
    if (!cfg.is_object() || !cfg.contains(key)) return;
    CLI::Option* opt = cmd->get_option_no_throw("--" + key);
    if (opt != nullptr && opt->count() > 0) return;
    var = cfg.at(key).get<T>();
}

struct GlobalFlags {
    std::string config_path;
    std::uint64_t seed = 1;
    std::string out_dir = ".";
    int repeats = 1;
    int parallel = 1;
    std::string corpus_path;
};

json load_config_file(const std::string& path) {
    if (path.empty()) return json::object();
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    json cfg = json::parse(in);
    if (!cfg.is_object()) throw std::runtime_error("config file must hold a JSON object");
    return cfg;
}

Corpus open_corpus(const GlobalFlags& g) {
    return load_corpus(default_corpus_path(g.corpus_path));
}

std::string out_path(const GlobalFlags& g, const std::string& name) {
    if (g.out_dir.empty() || g.out_dir == ".") return name;
    return g.out_dir + "/" + name;
}

Dataset load_or_generate(const std::string& data_path, Region region, int n,
                         std::uint64_t seed, int num_labels) {
    if (!data_path.empty()) return load_jsonl_dataset(data_path, num_labels);
    SynthSpec spec = default_synth_spec(region);
    spec.num_examples = n;
    spec.seed = seed;
    return gen_synthetic(spec);
}

// Deterministic downstream partition: the trailing third is the test set.
void split_downstream(const Dataset& downstream, Dataset& train_pool, Dataset& test) {
    if (downstream.size() < 6) {
        throw std::invalid_argument("downstream dataset too small to split");
    }
    const std::size_t n_test = downstream.size() / 3;
    train_pool.assign(downstream.begin(), downstream.end() - n_test);
    test.assign(downstream.end() - n_test, downstream.end());
}

std::string fingerprint(const json& resolved) {
    return hex64(fnv1a(resolved.dump()));
}

// ---------------------------------------------------------------------------
// gen-data

struct GenDataArgs {
    std::string task = "sentiment";
    int n = 2000;
    double signal_strength = 1.0;
    std::string out = "dataset.jsonl";
};

int cmd_gen_data(const GlobalFlags& g, const GenDataArgs& a) {
    if (a.n <= 0) throw CLI::ValidationError("--n", "must be positive");
    const Region region = region_from_string(a.task);
    SynthSpec spec = default_synth_spec(region);
    spec.num_examples = a.n;
    spec.signal_strength = a.signal_strength;
    spec.seed = g.seed;
    if (!g.corpus_path.empty() || std::getenv("PROMPTLAB_CORPUS")) {
        check_pools_against_corpus(spec, open_corpus(g));
    }
    Dataset data = gen_synthetic(spec);
    const std::string path = out_path(g, a.out);
    save_jsonl_dataset(data, path);
    std::map<int, long> counts;
    for (const auto& ex : data) ++counts[ex.label];
    std::cout << "wrote " << data.size() << " examples to " << path << " (";
    bool first = true;
    for (const auto& [label, c] : counts) {
        if (!first) std::cout << ", ";
        std::cout << "label " << label << ": " << c;
        first = false;
    }
    std::cout << ")\n";
    return 0;
}

// ---------------------------------------------------------------------------
// corpus-validate

int cmd_corpus_validate(const GlobalFlags& g) {
    Corpus corpus = open_corpus(g);  // the loader already enforces invariants
    for (Region region : {Region::sentiment, Region::spam}) {
        std::cout << to_string(region) << ":";
        for (Role role : {Role::pretrain_clean, Role::pretrain_trigger, Role::finetune_clean,
                          Role::transfer_trigger}) {
            std::cout << " " << to_string(role) << "=" << corpus.filter(region, role).size();
        }
        std::cout << " verbalizer_labels="
                  << (corpus.has_verbalizer(region) ? corpus.verbalizer(region).num_labels() : 0)
                  << "\n";
    }
    std::cout << "corpus OK (" << corpus.templates().size() << " templates)\n";
    return 0;
}

// ---------------------------------------------------------------------------
// pretrain

struct ModelArgs {
    int d_model = 64;
    int n_heads = 4;
    int n_layers = 2;
    int ffn_dim = 128;
    int max_len = 64;
    double dropout = 0.1;
};

void add_model_flags(CLI::App* cmd, ModelArgs& m) {
    cmd->add_option("--d-model", m.d_model, "model width");
    cmd->add_option("--n-heads", m.n_heads, "attention heads");
    cmd->add_option("--n-layers", m.n_layers, "transformer blocks");
    cmd->add_option("--ffn-dim", m.ffn_dim, "feed-forward width");
    cmd->add_option("--max-len", m.max_len, "sequence length");
    cmd->add_option("--dropout", m.dropout, "dropout rate");
}

void apply_model_cfg(CLI::App* cmd, const json& cfg, ModelArgs& m) {
    maybe_cfg(cmd, cfg, "d-model", m.d_model);
    maybe_cfg(cmd, cfg, "n-heads", m.n_heads);
    maybe_cfg(cmd, cfg, "n-layers", m.n_layers);
    maybe_cfg(cmd, cfg, "ffn-dim", m.ffn_dim);
    maybe_cfg(cmd, cfg, "max-len", m.max_len);
    maybe_cfg(cmd, cfg, "dropout", m.dropout);
}

struct PretrainArgs {
    std::string task = "sentiment";
    std::string data;
    int n = 2000;
    double poisoning_rate = 0.9;
    int target_label = 1;
    int trigger_count = 6;
    int epochs = 10;
    int batch_size = 32;
    double lr = 3e-4;
    double wd = 1e-2;
    int multi_tone = 1;
    std::string out = "victim.ckpt";
    std::string log = "train_log.jsonl";
    ModelArgs model;
};

int cmd_pretrain(const GlobalFlags& g, const PretrainArgs& a) {
    const Region region = region_from_string(a.task);
    Corpus corpus = open_corpus(g);
    const Verbalizer& verb = corpus.verbalizer(region);
    Dataset data = load_or_generate(a.data, region, a.n, derive_seed(g.seed, "pretrain_data"),
                                    verb.num_labels());

    AttackConfig attack;
    attack.poisoning_rate = a.poisoning_rate;
    attack.target_label = a.target_label;
    attack.trigger_count = a.trigger_count;
    attack.pretrain_epochs = a.epochs;
    attack.batch_size = a.batch_size;
    attack.learning_rate = a.lr;
    attack.weight_decay = a.wd;
    attack.multi_template_per_tone = a.multi_tone;
    attack.split_seed = derive_seed(g.seed, "split");
    attack.train_seed = derive_seed(g.seed, "train");
    attack.validate(verb.num_labels());

    // Vocabulary spans the pre-training texts plus every template of the
    // region, so fine-tune and transfer templates never introduce UNKs.
    std::vector<std::string> texts;
    for (const auto& ex : data) texts.push_back(ex.text);
    std::vector<Template> region_templates;
    for (const auto& t : corpus.templates()) {
        if (t.region == region) region_templates.push_back(t);
    }
    Vocab vocab = build_vocab(texts, region_templates, {verb}, 1, a.model.max_len);

    ModelConfig config;
    config.vocab_size = vocab.size();
    config.d_model = a.model.d_model;
    config.n_heads = a.model.n_heads;
    config.n_layers = a.model.n_layers;
    config.ffn_dim = a.model.ffn_dim;
    config.max_len = a.model.max_len;
    config.dropout_rate = a.model.dropout;
    config.init_seed = derive_seed(g.seed, "init");
    config.validate();

    SplitDataset split = split_dataset(data, attack.poisoning_rate, attack.target_label,
                                       attack.split_seed);
    std::vector<Template> clean_templates = corpus.filter(region, Role::pretrain_clean);

    ModelParams params = init_model(config);
    CheckpointMeta meta;
    meta.region = to_string(region);
    meta.target_label = attack.target_label;
    meta.poisoning_rate = attack.poisoning_rate;

    TrainLog log;
    if (a.multi_tone > 1) {
        // Table-6-style strategy: 2 base triggers, each with (multi_tone - 1)
        // same-keyword extras drawn from the transfer pool; the remaining
        // transfer templates stay held out for evaluation.
        TriggerSet base_set = select_triggers(corpus, region, 2, derive_seed(g.seed, "triggers"));
        std::vector<Template> bases, extras;
        std::vector<std::string> held_out;
        for (const auto& id : base_set.ids) {
            const Template& base = corpus.by_id(id);
            bases.push_back(base);
            auto transfer = transfer_set_for(corpus, base);
            const int extras_per_base = a.multi_tone - 1;
            if (static_cast<int>(transfer.size()) <= extras_per_base) {
                throw std::runtime_error("multi-tone: keyword '" + base.keyword +
                                         "' has too few transfer templates to hold any out");
            }
            for (std::size_t i = 0; i < transfer.size(); ++i) {
                if (static_cast<int>(i) < extras_per_base) {
                    extras.push_back(transfer[i]);
                } else {
                    held_out.push_back(transfer[i].id);
                }
            }
        }
        for (const auto& t : bases) meta.trigger_ids.push_back(t.id);
        for (const auto& t : extras) {
            meta.trigger_ids.push_back(t.id);
            meta.excluded_transfer_ids.push_back(t.id);
        }
        log = pretrain_multi_tone(config, params, split, clean_templates, bases, extras, held_out,
                                  verb, vocab, attack);
    } else {
        std::vector<Template> triggers;
        if (attack.poisoning_rate > 0.0) {
            TriggerSet set = select_triggers(corpus, region, attack.trigger_count,
                                             derive_seed(g.seed, "triggers"));
            for (const auto& id : set.ids) triggers.push_back(corpus.by_id(id));
            meta.trigger_ids = set.ids;
        }
        log = pretrain_victim(config, params, split, clean_templates, triggers, verb, vocab,
                              attack);
    }

    Checkpoint ckpt{config, vocab, std::move(params), meta};
    save_checkpoint(ckpt, out_path(g, a.out));
    write_train_log_jsonl(log, out_path(g, a.log));
    const auto& last = log.epochs.back();
    std::cout << "pretrained " << a.epochs << " epochs: L=" << last.total_loss
              << " L_s=" << last.clean_loss << " L_p=" << last.poison_loss
              << " clean_acc=" << last.clean_acc << " poisoned_acc=" << last.poisoned_acc
              << " additivity_gap=" << log.max_additivity_gap << "\n";
    std::cout << "checkpoint: " << out_path(g, a.out) << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// finetune

struct FinetuneArgs {
    std::string checkpoint = "victim.ckpt";
    std::string data;
    int n = 600;
    int shots = 16;
    int epochs = 10;
    int batch_size = 32;
    double lr = 3e-4;
    double wd = 1e-2;
    std::string out = "finetuned.ckpt";
    std::string log = "finetune_log.jsonl";
};

void check_finetune_overlap(const Corpus& corpus, Region region,
                            const std::vector<Template>& finetune_templates,
                            const CheckpointMeta& meta) {
    std::set<std::string> pretrain_patterns;
    for (const auto& t : corpus.filter(region, Role::pretrain_clean)) {
        pretrain_patterns.insert(t.pattern);
    }
    for (const auto& id : meta.trigger_ids) {
        if (corpus.has(id)) pretrain_patterns.insert(corpus.by_id(id).pattern);
    }
    for (const auto& t : finetune_templates) {
        if (pretrain_patterns.count(t.pattern)) {
            throw std::runtime_error("fine-tune template '" + t.id +
                                     "' repeats a pre-training template pattern");
        }
    }
}

TrainLog run_finetune(const Checkpoint& ckpt, ModelParams& params, const Corpus& corpus,
                      const Dataset& train_pool, int shots, int epochs, int batch_size,
                      double lr, double wd, std::uint64_t seed) {
    const Region region = region_from_string(ckpt.meta.region);
    const Verbalizer& verb = corpus.verbalizer(region);
    std::vector<Template> ft = corpus.filter(region, Role::finetune_clean);
    check_finetune_overlap(corpus, region, ft, ckpt.meta);

    AttackConfig attack;
    attack.finetune_shots = shots;
    attack.finetune_epochs = epochs;
    attack.batch_size = batch_size;
    attack.learning_rate = lr;
    attack.weight_decay = wd;
    attack.train_seed = derive_seed(seed, "finetune_train");
    attack.shot_seed = derive_seed(seed, "finetune_shots");
    return finetune_fewshot(ckpt.config, params, train_pool, ft, verb, ckpt.vocab, attack);
}

int cmd_finetune(const GlobalFlags& g, const FinetuneArgs& a) {
    Checkpoint ckpt = load_checkpoint(a.checkpoint);
    Corpus corpus = open_corpus(g);
    const Region region = region_from_string(ckpt.meta.region);
    const Verbalizer& verb = corpus.verbalizer(region);
    Dataset downstream = load_or_generate(a.data, region, a.n, derive_seed(g.seed, "downstream"),
                                          verb.num_labels());
    Dataset train_pool, test;
    split_downstream(downstream, train_pool, test);

    ModelParams params = ckpt.params;
    TrainLog log = run_finetune(ckpt, params, corpus, train_pool, a.shots, a.epochs, a.batch_size,
                                a.lr, a.wd, g.seed);
    Checkpoint out = ckpt;
    out.params = std::move(params);
    save_checkpoint(out, out_path(g, a.out));
    write_train_log_jsonl(log, out_path(g, a.log));
    std::cout << "finetuned " << a.epochs << " epochs on " << a.shots
              << " shots/label; final clean_acc=" << log.epochs.back().clean_acc << "\n";
    std::cout << "checkpoint: " << out_path(g, a.out) << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// attack-eval

struct AttackEvalArgs {
    std::string checkpoint = "victim.ckpt";
    std::string mode = "direct";
    std::string data;
    int n = 600;
    int shots = 16;
    int finetune_epochs = 10;
    int batch_size = 32;
    double lr = 3e-4;
    double wd = 1e-2;
    std::vector<int> n_triggers;
    std::string report = "report.json";
};

std::vector<Template> transfer_pool_for_checkpoint(const Corpus& corpus, const Checkpoint& ckpt) {
    const std::set<std::string> barred(ckpt.meta.trigger_ids.begin(),
                                       ckpt.meta.trigger_ids.end());
    std::set<std::string> seen;
    std::vector<Template> pool;
    for (const auto& id : ckpt.meta.trigger_ids) {
        if (!corpus.has(id)) continue;
        const Template& trained = corpus.by_id(id);
        if (trained.keyword.empty() || trained.tone != Tone::strong) continue;
        for (const auto& t : transfer_set_for(corpus, trained)) {
            if (barred.count(t.id) || !seen.insert(t.id).second) continue;
            pool.push_back(t);
        }
    }
    if (pool.empty()) {
        throw std::runtime_error("no held-out transfer templates for this checkpoint");
    }
    return pool;
}

struct EvalOutcome {
    BreakdownResult cacc;
    BreakdownResult asr;
};

// One fine-tune + evaluation pass from the frozen victim, deterministic per
// repeat index.
EvalOutcome eval_once(const Checkpoint& ckpt, const Corpus& corpus, const Dataset& train_pool,
                      const Dataset& test, const std::vector<Template>& attack_pool,
                      const AttackEvalArgs& a, std::uint64_t seed, int repeat) {
    const Region region = region_from_string(ckpt.meta.region);
    const Verbalizer& verb = corpus.verbalizer(region);
    ModelParams params = ckpt.params;
    run_finetune(ckpt, params, corpus, train_pool, a.shots, a.finetune_epochs, a.batch_size,
                 a.lr, a.wd, derive_seed(seed, "repeat", static_cast<std::uint64_t>(repeat)));
    EvalOutcome out;
    out.cacc = eval_cacc(ckpt.config, params, ckpt.vocab, test,
                         corpus.filter(region, Role::finetune_clean), verb);
    out.asr = eval_asr(ckpt.config, params, ckpt.vocab, test, attack_pool, verb,
                       ckpt.meta.target_label);
    return out;
}

void accumulate(BreakdownResult& into, const BreakdownResult& part) {
    into.total.successes += part.total.successes;
    into.total.attempts += part.total.attempts;
    for (const auto& [id, s] : part.per_template) {
        into.per_template[id].successes += s.successes;
        into.per_template[id].attempts += s.attempts;
    }
}

int cmd_attack_eval(const GlobalFlags& g, const AttackEvalArgs& a, const json& resolved) {
    Checkpoint ckpt = load_checkpoint(a.checkpoint);
    const std::uint64_t digest_before = checkpoint_digest(ckpt);
    Corpus corpus = open_corpus(g);
    const Region region = region_from_string(ckpt.meta.region);
    const Verbalizer& verb = corpus.verbalizer(region);

    EvalReport report;
    report.mode = a.mode;
    report.config_fingerprint = fingerprint(resolved);
    report.seeds["seed"] = g.seed;
    report.timestamp = iso_timestamp();

    if (a.mode == "stealth") {
        // Fluency comparison needs no fine-tuning: score strong-tone trigger
        // templates against rare-token splices under the n-gram LM.
        Dataset background_data = load_or_generate(a.data, region, a.n,
                                                   derive_seed(g.seed, "downstream"),
                                                   verb.num_labels());
        std::vector<Template> cleans = corpus.filter(region, Role::pretrain_clean);
        std::vector<Template> strongs = corpus.filter(region, Role::pretrain_trigger);
        const std::size_t pairs = std::min(cleans.size(), strongs.size());

        // The reader's background corpus: clean and strong-tone renders of
        // the task texts (rare-token splices never occur in fluent text).
        std::vector<std::string> background;
        for (const auto& ex : background_data) {
            for (std::size_t p = 0; p < pairs; ++p) {
                for (const Template* tmpl : {&cleans[p], &strongs[p]}) {
                    std::string s = apply_template(*tmpl, ex.text);
                    const std::size_t pos = s.find("<mask>");
                    background.push_back(s.substr(0, pos) + verb.answer(ex.label) +
                                         s.substr(pos + 6));
                }
            }
        }
        NgramLM lm = train_ngram_lm(background, 2, 1.0);

        std::ofstream csv(out_path(g, "stealth.csv"));
        csv << "pair,clean_id,strong_id,delta_ppl_strong,delta_ppl_rare\n";
        csv.precision(17);
        double sum_strong = 0.0;
        bool all_ordered = true;
        for (std::size_t p = 0; p < pairs; ++p) {
            Template rare = make_rare_token_template(cleans[p], "cf");
            const double d_strong = eval_delta_ppl(lm, background_data, cleans[p], strongs[p], verb);
            const double d_rare = eval_delta_ppl(lm, background_data, cleans[p], rare, verb);
            csv << p << "," << cleans[p].id << "," << strongs[p].id << "," << d_strong << ","
                << d_rare << "\n";
            sum_strong += d_strong;
            all_ordered = all_ordered && (d_strong < d_rare);
            std::cout << cleans[p].id << " vs " << strongs[p].id << ": dPPL strong=" << d_strong
                      << " rare=" << d_rare << "\n";
        }
        report.delta_ppl = sum_strong / static_cast<double>(pairs);
        save_report(report, out_path(g, a.report));
        std::cout << (all_ordered ? "stealth ordering holds on every pairing\n"
                                  : "stealth ordering violated on some pairing\n");
        return all_ordered ? 0 : 1;
    }

    Dataset downstream = load_or_generate(a.data, region, a.n, derive_seed(g.seed, "downstream"),
                                          verb.num_labels());
    Dataset train_pool, test;
    split_downstream(downstream, train_pool, test);

    std::vector<Template> attack_pool;
    if (a.mode == "direct") {
        if (ckpt.meta.trigger_ids.empty()) {
            throw std::runtime_error("checkpoint carries no trained triggers to evaluate");
        }
        for (const auto& id : ckpt.meta.trigger_ids) attack_pool.push_back(corpus.by_id(id));
    } else if (a.mode == "transfer") {
        attack_pool = transfer_pool_for_checkpoint(corpus, ckpt);
    } else {
        throw CLI::ValidationError("--mode", "must be direct, transfer, or stealth");
    }

    BreakdownResult cacc, asr;
    std::vector<double> asr_per_repeat;
    for (int r = 0; r < g.repeats; ++r) {
        EvalOutcome once = eval_once(ckpt, corpus, train_pool, test, attack_pool, a, g.seed, r);
        accumulate(cacc, once.cacc);
        accumulate(asr, once.asr);
        asr_per_repeat.push_back(once.asr.fraction());
    }
    report.cacc = cacc.fraction();
    report.asr = asr.fraction();
    report.per_template_cacc = cacc.per_template;
    report.per_template_asr = asr.per_template;

    if (!a.n_triggers.empty()) {
        // Subset sizes are evaluated on the first repeat's fine-tuned model.
        ModelParams params = ckpt.params;
        run_finetune(ckpt, params, corpus, train_pool, a.shots, a.finetune_epochs, a.batch_size,
                     a.lr, a.wd, derive_seed(g.seed, "repeat", 0));
        Predictor predictor = model_predictor(ckpt.config, params, ckpt.vocab, verb);
        report.trigger_subset_asr =
            eval_trigger_subsets(predictor, test, attack_pool, a.n_triggers,
                                 ckpt.meta.target_label, derive_seed(g.seed, "subset"));
        std::ofstream csv(out_path(g, "trigger_subsets.csv"));
        csv << "n_triggers,asr\n";
        csv.precision(17);
        for (const auto& [n, v] : report.trigger_subset_asr) csv << n << "," << v << "\n";
    }

    save_report(report, out_path(g, a.report));
    if (checkpoint_digest(ckpt) != digest_before) {
        throw std::runtime_error("evaluation mutated the checkpoint");
    }

    const auto [lo, hi] = std::minmax_element(asr_per_repeat.begin(), asr_per_repeat.end());
    std::cout << a.mode << " eval over " << g.repeats << " repeat(s): cacc=" << *report.cacc
              << " asr=" << *report.asr << " (per-repeat range " << *lo << ".." << *hi << ")\n";
    std::cout << "report: " << out_path(g, a.report) << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// sweep

struct SweepArgs {
    std::string axis = "shots";
    std::vector<double> values;
    std::string checkpoint = "victim.ckpt";
    std::string task = "sentiment";
    std::string data;
    int n = 600;
    int pretrain_n = 2000;
    int shots = 16;
    int finetune_epochs = 10;
    int pretrain_epochs = 10;
    int batch_size = 32;
    double lr = 3e-4;
    double wd = 1e-2;
    double poisoning_rate = 0.9;
    int trigger_count = 6;
    std::string csv = "sweep.csv";
    ModelArgs model;
};

struct SweepPoint {
    double value = 0.0;
    bool ok = false;
    double cacc = 0.0;
    double asr = 0.0;
    std::string error;
};

SweepPoint sweep_point(const GlobalFlags& g, const SweepArgs& a, double value,
                       const json& resolved) {
    SweepPoint point;
    point.value = value;
    try {
        GlobalFlags pg = g;
        std::ostringstream tag;
        tag << "sweep_" << a.axis << "_" << value;

        std::string ckpt_path = a.checkpoint;
        if (a.axis != "shots") {
            // Re-pretrain per point with the axis value substituted in.
            PretrainArgs pre;
            pre.task = a.task;
            pre.data = a.data;
            pre.n = a.pretrain_n;
            pre.poisoning_rate = a.axis == "poisoning_rate" ? value : a.poisoning_rate;
            pre.trigger_count = a.axis == "trigger_count" ? static_cast<int>(value)
                                                          : a.trigger_count;
            pre.epochs = a.pretrain_epochs;
            pre.batch_size = a.batch_size;
            pre.lr = a.lr;
            pre.wd = a.wd;
            pre.model = a.model;
            pre.out = tag.str() + ".ckpt";
            pre.log = tag.str() + "_train.jsonl";
            cmd_pretrain(pg, pre);
            ckpt_path = out_path(pg, pre.out);
        }

        AttackEvalArgs ev;
        ev.checkpoint = ckpt_path;
        ev.mode = "direct";
        ev.n = a.n;
        ev.shots = a.axis == "shots" ? static_cast<int>(value) : a.shots;
        ev.finetune_epochs = a.finetune_epochs;
        ev.batch_size = a.batch_size;
        ev.lr = a.lr;
        ev.wd = a.wd;
        ev.report = tag.str() + ".json";
        cmd_attack_eval(pg, ev, resolved);

        EvalReport report = load_report(out_path(pg, ev.report));
        point.cacc = report.cacc.value();
        point.asr = report.asr.value();
        point.ok = true;
    } catch (const std::exception& e) {
        point.error = e.what();
    }
    return point;
}

int cmd_sweep(const GlobalFlags& g, const SweepArgs& a, const json& resolved) {
    if (a.axis != "shots" && a.axis != "poisoning_rate" && a.axis != "trigger_count") {
        throw CLI::ValidationError("--axis", "must be shots, poisoning_rate, or trigger_count");
    }
    if (a.values.empty()) throw CLI::ValidationError("--values", "must be non-empty");
    for (std::size_t i = 1; i < a.values.size(); ++i) {
        if (a.values[i] <= a.values[i - 1]) {
            throw CLI::ValidationError("--values", "must be strictly increasing");
        }
    }

    std::vector<SweepPoint> points(a.values.size());
    if (g.parallel > 1) {
        std::vector<std::future<SweepPoint>> futures;
        for (double v : a.values) {
            futures.push_back(std::async(std::launch::async, sweep_point, g, a, v, resolved));
        }
        for (std::size_t i = 0; i < futures.size(); ++i) points[i] = futures[i].get();
    } else {
        for (std::size_t i = 0; i < a.values.size(); ++i) {
            points[i] = sweep_point(g, a, a.values[i], resolved);
        }
    }

    std::ofstream csv(out_path(g, a.csv));
    csv << a.axis << ",cacc,asr\n";
    csv.precision(17);
    bool any_failed = false;
    for (const auto& p : points) {
        if (p.ok) {
            csv << p.value << "," << p.cacc << "," << p.asr << "\n";
            std::cout << a.axis << "=" << p.value << ": cacc=" << p.cacc << " asr=" << p.asr
                      << "\n";
        } else {
            any_failed = true;
            std::cerr << a.axis << "=" << p.value << " FAILED: " << p.error << "\n";
        }
    }
    if (any_failed) {
        std::ofstream err(out_path(g, "sweep_errors.txt"));
        for (const auto& p : points) {
            if (!p.ok) err << a.axis << "=" << p.value << ": " << p.error << "\n";
        }
    }
    std::cout << "sweep csv: " << out_path(g, a.csv) << "\n";
    return any_failed ? 1 : 0;
}

// ---------------------------------------------------------------------------
// features

struct FeaturesArgs {
    std::string checkpoint = "victim.ckpt";
    int n = 200;
    std::string data;
    std::string features_csv = "features.csv";
    std::string projection_csv = "projection.csv";
};

int cmd_features(const GlobalFlags& g, const FeaturesArgs& a) {
    if (a.n < 2) throw CLI::ValidationError("--n", "need at least 2 samples to project");
    Checkpoint ckpt = load_checkpoint(a.checkpoint);
    Corpus corpus = open_corpus(g);
    const Region region = region_from_string(ckpt.meta.region);
    const Verbalizer& verb = corpus.verbalizer(region);
    Dataset data = load_or_generate(a.data, region, a.n, derive_seed(g.seed, "features"),
                                    verb.num_labels());
    if (static_cast<int>(data.size()) < a.n) {
        throw std::runtime_error("dataset smaller than requested sample count");
    }
    data.resize(a.n);

    const Template clean = corpus.filter(region, Role::pretrain_clean)[0];
    if (ckpt.meta.trigger_ids.empty()) {
        throw std::runtime_error("checkpoint carries no trigger template for poisoned renders");
    }
    const Template trigger = corpus.by_id(ckpt.meta.trigger_ids[0]);

    // Alternate clean/poisoned renders of the sample.
    std::vector<PromptedExample> examples;
    for (int i = 0; i < a.n; ++i) {
        const bool poisoned = i % 2 == 1;
        const Template& tmpl = poisoned ? trigger : clean;
        const int supervision = poisoned ? ckpt.meta.target_label : data[i].label;
        examples.push_back(encode(ckpt.vocab, apply_template(tmpl, data[i].text),
                                  verb.answer(supervision), data[i].label, poisoned));
    }

    Eigen::MatrixXd features = mask_features(ckpt.config, ckpt.params, examples);
    export_mask_features(features, examples, out_path(g, a.features_csv));
    Eigen::MatrixXd proj = project_2d(features);

    std::ofstream out(out_path(g, a.projection_csv));
    out << "x,y,label,poisoned\n";
    out.precision(17);
    for (Eigen::Index i = 0; i < proj.rows(); ++i) {
        out << proj(i, 0) << "," << proj(i, 1) << "," << examples[i].label << ","
            << (examples[i].poisoned ? 1 : 0) << "\n";
    }
    std::cout << "features: " << out_path(g, a.features_csv) << " (" << features.rows() << "x"
              << features.cols() << ")\n";
    std::cout << "projection: " << out_path(g, a.projection_csv) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"template-trigger backdoor laboratory for prompt-based cloze classifiers"};
    app.require_subcommand(1);

    GlobalFlags g;
    app.add_option("--config", g.config_path, "JSON config file (flags override it)");
    app.add_option("--seed", g.seed, "master seed; all sub-seeds derive from it");
    app.add_option("--out-dir", g.out_dir, "output directory");
    app.add_option("--repeats", g.repeats, "evaluation repeats (mean over repeats)");
    app.add_option("--parallel", g.parallel, "max concurrent sweep points");
    app.add_option("--corpus", g.corpus_path, "template corpus path (or PROMPTLAB_CORPUS)");

    GenDataArgs gen;
    CLI::App* c_gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
    c_gen->add_option("--task", gen.task, "sentiment | spam");
    c_gen->add_option("--n", gen.n, "number of examples");
    c_gen->add_option("--signal-strength", gen.signal_strength, "label-signal probability");
    c_gen->add_option("--out", gen.out, "output JSONL file");

    PretrainArgs pre;
    CLI::App* c_pre = app.add_subcommand("pretrain", "poisoned pre-training of a victim model");
    c_pre->add_option("--task", pre.task, "sentiment | spam");
    c_pre->add_option("--data", pre.data, "pre-training dataset JSONL (default: synthetic)");
    c_pre->add_option("--n", pre.n, "synthetic dataset size when --data is absent");
    c_pre->add_option("--poisoning-rate", pre.poisoning_rate, "share of non-target pool poisoned");
    c_pre->add_option("--target-label", pre.target_label, "attack target label");
    c_pre->add_option("--trigger-count", pre.trigger_count, "number of trigger templates (k)");
    c_pre->add_option("--epochs", pre.epochs, "pre-training epochs");
    c_pre->add_option("--batch-size", pre.batch_size, "batch size");
    c_pre->add_option("--lr", pre.lr, "learning rate");
    c_pre->add_option("--wd", pre.wd, "weight decay");
    c_pre->add_option("--multi-tone", pre.multi_tone,
                      "templates per tone; >1 trains base triggers plus transfer extras");
    c_pre->add_option("--out", pre.out, "checkpoint file");
    c_pre->add_option("--log", pre.log, "training log JSONL");
    add_model_flags(c_pre, pre.model);

    FinetuneArgs fin;
    CLI::App* c_fin = app.add_subcommand("finetune", "few-shot fine-tuning on clean templates");
    c_fin->add_option("--checkpoint", fin.checkpoint, "victim checkpoint");
    c_fin->add_option("--data", fin.data, "downstream dataset JSONL (default: synthetic)");
    c_fin->add_option("--n", fin.n, "synthetic dataset size when --data is absent");
    c_fin->add_option("--shots", fin.shots, "examples per label");
    c_fin->add_option("--epochs", fin.epochs, "fine-tuning epochs");
    c_fin->add_option("--batch-size", fin.batch_size, "batch size");
    c_fin->add_option("--lr", fin.lr, "learning rate");
    c_fin->add_option("--wd", fin.wd, "weight decay");
    c_fin->add_option("--out", fin.out, "output checkpoint file");
    c_fin->add_option("--log", fin.log, "training log JSONL");

    AttackEvalArgs ev;
    CLI::App* c_ev = app.add_subcommand("attack-eval", "fine-tune and evaluate the attack");
    c_ev->add_option("--checkpoint", ev.checkpoint, "victim checkpoint");
    c_ev->add_option("--mode", ev.mode, "direct | transfer | stealth");
    c_ev->add_option("--data", ev.data, "downstream dataset JSONL (default: synthetic)");
    c_ev->add_option("--n", ev.n, "synthetic dataset size when --data is absent");
    c_ev->add_option("--shots", ev.shots, "examples per label for fine-tuning");
    c_ev->add_option("--finetune-epochs", ev.finetune_epochs, "fine-tuning epochs");
    c_ev->add_option("--batch-size", ev.batch_size, "batch size");
    c_ev->add_option("--lr", ev.lr, "learning rate");
    c_ev->add_option("--wd", ev.wd, "weight decay");
    c_ev->add_option("--n-triggers", ev.n_triggers, "subset sizes for pooled ASR")
        ->delimiter(',');
    c_ev->add_option("--report", ev.report, "report file name");

    SweepArgs sw;
    CLI::App* c_sw = app.add_subcommand("sweep", "sweep one experimental axis");
    c_sw->add_option("--axis", sw.axis, "shots | poisoning_rate | trigger_count");
    c_sw->add_option("--values", sw.values, "strictly increasing axis values")->delimiter(',');
    c_sw->add_option("--checkpoint", sw.checkpoint, "victim checkpoint (shots axis)");
    c_sw->add_option("--task", sw.task, "sentiment | spam (re-pretraining axes)");
    c_sw->add_option("--data", sw.data, "pre-training dataset (re-pretraining axes)");
    c_sw->add_option("--n", sw.n, "downstream synthetic dataset size");
    c_sw->add_option("--pretrain-n", sw.pretrain_n, "pre-training synthetic dataset size");
    c_sw->add_option("--shots", sw.shots, "shots when not the swept axis");
    c_sw->add_option("--finetune-epochs", sw.finetune_epochs, "fine-tuning epochs");
    c_sw->add_option("--pretrain-epochs", sw.pretrain_epochs, "pre-training epochs");
    c_sw->add_option("--batch-size", sw.batch_size, "batch size");
    c_sw->add_option("--lr", sw.lr, "learning rate");
    c_sw->add_option("--wd", sw.wd, "weight decay");
    c_sw->add_option("--poisoning-rate", sw.poisoning_rate, "rate when not the swept axis");
    c_sw->add_option("--trigger-count", sw.trigger_count, "k when not the swept axis");
    c_sw->add_option("--csv", sw.csv, "summary CSV file");
    add_model_flags(c_sw, sw.model);

    FeaturesArgs feat;
    CLI::App* c_feat = app.add_subcommand("features", "export mask features and 2D projection");
    c_feat->add_option("--checkpoint", feat.checkpoint, "victim checkpoint");
    c_feat->add_option("--n", feat.n, "number of samples");
    c_feat->add_option("--data", feat.data, "dataset JSONL (default: synthetic)");
    c_feat->add_option("--features-csv", feat.features_csv, "feature CSV file");
    c_feat->add_option("--projection-csv", feat.projection_csv, "projection CSV file");

    CLI::App* c_val = app.add_subcommand("corpus-validate", "validate the template corpus");

    CLI11_PARSE(app, argc, argv);

    try {
        const json cfg = load_config_file(g.config_path);
        maybe_cfg(&app, cfg, "seed", g.seed);
        maybe_cfg(&app, cfg, "out-dir", g.out_dir);
        maybe_cfg(&app, cfg, "repeats", g.repeats);
        maybe_cfg(&app, cfg, "parallel", g.parallel);
        maybe_cfg(&app, cfg, "corpus", g.corpus_path);
        if (g.repeats < 1) throw CLI::ValidationError("--repeats", "must be >= 1");
        if (g.parallel < 1) throw CLI::ValidationError("--parallel", "must be >= 1");

        // The resolved-config fingerprint folds in every knob of the run.
        json resolved{{"seed", g.seed}, {"repeats", g.repeats}};

        if (c_gen->parsed()) {
            maybe_cfg(c_gen, cfg, "task", gen.task);
            maybe_cfg(c_gen, cfg, "n", gen.n);
            maybe_cfg(c_gen, cfg, "signal-strength", gen.signal_strength);
            return cmd_gen_data(g, gen);
        }
        if (c_pre->parsed()) {
            maybe_cfg(c_pre, cfg, "task", pre.task);
            maybe_cfg(c_pre, cfg, "poisoning-rate", pre.poisoning_rate);
            maybe_cfg(c_pre, cfg, "target-label", pre.target_label);
            maybe_cfg(c_pre, cfg, "trigger-count", pre.trigger_count);
            maybe_cfg(c_pre, cfg, "epochs", pre.epochs);
            maybe_cfg(c_pre, cfg, "batch-size", pre.batch_size);
            maybe_cfg(c_pre, cfg, "lr", pre.lr);
            maybe_cfg(c_pre, cfg, "wd", pre.wd);
            maybe_cfg(c_pre, cfg, "multi-tone", pre.multi_tone);
            apply_model_cfg(c_pre, cfg, pre.model);
            return cmd_pretrain(g, pre);
        }
        if (c_fin->parsed()) {
            maybe_cfg(c_fin, cfg, "shots", fin.shots);
            maybe_cfg(c_fin, cfg, "epochs", fin.epochs);
            maybe_cfg(c_fin, cfg, "lr", fin.lr);
            maybe_cfg(c_fin, cfg, "wd", fin.wd);
            return cmd_finetune(g, fin);
        }
        if (c_ev->parsed()) {
            maybe_cfg(c_ev, cfg, "mode", ev.mode);
            maybe_cfg(c_ev, cfg, "shots", ev.shots);
            maybe_cfg(c_ev, cfg, "finetune-epochs", ev.finetune_epochs);
            maybe_cfg(c_ev, cfg, "lr", ev.lr);
            maybe_cfg(c_ev, cfg, "wd", ev.wd);
            resolved["mode"] = ev.mode;
            resolved["shots"] = ev.shots;
            resolved["finetune_epochs"] = ev.finetune_epochs;
            resolved["lr"] = ev.lr;
            resolved["wd"] = ev.wd;
            resolved["n"] = ev.n;
            return cmd_attack_eval(g, ev, resolved);
        }
        if (c_sw->parsed()) {
            maybe_cfg(c_sw, cfg, "axis", sw.axis);
            maybe_cfg(c_sw, cfg, "shots", sw.shots);
            maybe_cfg(c_sw, cfg, "poisoning-rate", sw.poisoning_rate);
            maybe_cfg(c_sw, cfg, "trigger-count", sw.trigger_count);
            apply_model_cfg(c_sw, cfg, sw.model);
            resolved["axis"] = sw.axis;
            resolved["values"] = sw.values;
            return cmd_sweep(g, sw, resolved);
        }
        if (c_feat->parsed()) {
            maybe_cfg(c_feat, cfg, "n", feat.n);
            return cmd_features(g, feat);
        }
        if (c_val->parsed()) return cmd_corpus_validate(g);
    } catch (const CLI::Error& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
