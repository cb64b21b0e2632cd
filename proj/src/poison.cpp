#include "promptlab/poison.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "promptlab/rng.hpp"

namespace promptlab {

using json = nlohmann::json;

void AttackConfig::validate(int num_labels) const {
    if (poisoning_rate < 0.0 || poisoning_rate > 1.0) {
        throw std::invalid_argument("attack config: poisoning_rate must be in [0, 1]");
    }
    if (target_label < 0 || target_label >= num_labels) {
        throw std::invalid_argument("attack config: target_label out of range");
    }
    if (trigger_count <= 0 || pretrain_epochs <= 0 || finetune_shots <= 0 ||
        finetune_epochs <= 0 || batch_size <= 0) {
        throw std::invalid_argument("attack config: counts must be positive");
    }
    if (multi_template_per_tone < 1) {
        throw std::invalid_argument("attack config: multi_template_per_tone must be >= 1");
    }
}

SplitDataset split_dataset(const Dataset& dataset, double poisoning_rate,
                           int target_label, std::uint64_t split_seed) {
    if (dataset.empty()) throw std::invalid_argument("split_dataset: empty dataset");
    if (poisoning_rate < 0.0 || poisoning_rate > 1.0) {
        throw std::invalid_argument("split_dataset: rate out of range");
    }

    std::vector<std::size_t> non_target;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        if (dataset[i].label != target_label) non_target.push_back(i);
    }
    if (poisoning_rate > 0.0 && non_target.empty()) {
        throw std::invalid_argument("split_dataset: no non-target examples to poison");
    }

    const auto n_poison = static_cast<std::size_t>(
        std::llround(poisoning_rate * static_cast<double>(non_target.size())));
    Rng rng(derive_seed(split_seed, "split"));
    shuffle_in_place(non_target, rng);
    non_target.resize(n_poison);
    std::sort(non_target.begin(), non_target.end());

    std::vector<bool> poisoned(dataset.size(), false);
    for (std::size_t i : non_target) poisoned[i] = true;

    SplitDataset split;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        (poisoned[i] ? split.poison : split.clean).push_back(dataset[i]);
    }
    return split;
}

namespace {

void check_roles(const std::vector<Template>& clean_templates,
                 const std::vector<Template>& trigger_templates) {
    if (clean_templates.empty()) {
        throw std::invalid_argument("training: need at least one clean template");
    }
    for (const auto& t : clean_templates) {
        if (t.role != Role::pretrain_clean) {
            throw std::invalid_argument("training: clean template '" + t.id +
                                        "' must have role pretrain_clean");
        }
    }
    for (const auto& t : trigger_templates) {
        if (t.role != Role::pretrain_trigger && t.role != Role::transfer_trigger) {
            throw std::invalid_argument("training: trigger template '" + t.id +
                                        "' must be a trigger-role template");
        }
    }
}

PromptedExample render_one(const Template& tmpl, const LabeledExample& ex,
                           const Verbalizer& verbalizer, const Vocab& vocab,
                           int supervision_label, bool poisoned) {
    PromptedExample pe = encode(vocab, apply_template(tmpl, ex.text),
                                verbalizer.answer(supervision_label), ex.label, poisoned);
    return pe;
}

}  // namespace

std::vector<std::vector<PromptedExample>> render_poisoned_batches(
    const SplitDataset& split, const std::vector<Template>& clean_templates,
    const std::vector<Template>& trigger_templates, const Verbalizer& verbalizer,
    const Vocab& vocab, int target_label, int batch_size, std::uint64_t seed) {
    check_roles(clean_templates, trigger_templates);
    if (!split.poison.empty() && trigger_templates.empty()) {
        throw std::invalid_argument("render: poison partition present but trigger set empty");
    }
    if (batch_size <= 0) throw std::invalid_argument("render: batch_size must be positive");

    Rng rng(derive_seed(seed, "render"));
    std::vector<PromptedExample> all;
    all.reserve(split.clean.size() + split.poison.size());
    for (const auto& ex : split.clean) {
        const Template& t = clean_templates[uniform_below(rng, clean_templates.size())];
        all.push_back(render_one(t, ex, verbalizer, vocab, ex.label, false));
    }
    for (const auto& ex : split.poison) {
        const Template& t = trigger_templates[uniform_below(rng, trigger_templates.size())];
        all.push_back(render_one(t, ex, verbalizer, vocab, target_label, true));
    }
    shuffle_in_place(all, rng);

    std::vector<std::vector<PromptedExample>> batches;
    for (std::size_t i = 0; i < all.size(); i += batch_size) {
        const std::size_t end = std::min(all.size(), i + batch_size);
        batches.emplace_back(all.begin() + i, all.begin() + end);
    }
    return batches;
}

namespace {

// Shared optimizer loop over rendered epochs. `make_batches(epoch)` supplies
// each epoch's shuffled batches; accuracy is probed on a capped sample of
// that epoch's examples after the update pass.
TrainLog run_training(const ModelConfig& config, ModelParams& params,
                      const Verbalizer& verbalizer, const Vocab& vocab,
                      int epochs, double learning_rate, double weight_decay,
                      std::uint64_t train_seed,
                      const std::function<std::vector<std::vector<PromptedExample>>(int)>& make_batches) {
    TrainLog log;
    OptimizerState opt = init_optimizer(params, learning_rate, weight_decay);

    for (int epoch = 0; epoch < epochs; ++epoch) {
        const auto t_start = std::chrono::steady_clock::now();
        Rng dropout_rng(derive_seed(train_seed, "dropout", static_cast<std::uint64_t>(epoch)));

        double sum_clean = 0.0, sum_poison = 0.0;
        long n_clean = 0, n_poison = 0;
        auto batches = make_batches(epoch);
        for (const auto& batch : batches) {
            ForwardOptions options;
            options.training = true;
            options.dropout_rng = &dropout_rng;
            LossResult res = loss_and_grads(config, params, batch, options);

            double batch_clean = 0.0, batch_poison = 0.0;
            long bc = 0, bp = 0;
            for (std::size_t i = 0; i < batch.size(); ++i) {
                if (batch[i].poisoned) {
                    batch_poison += res.per_example_ce[i];
                    ++bp;
                } else {
                    batch_clean += res.per_example_ce[i];
                    ++bc;
                }
            }
            const double n = static_cast<double>(batch.size());
            const double recombined = (batch_clean + batch_poison) / n;
            log.max_additivity_gap = std::max(log.max_additivity_gap,
                                              std::abs(res.loss - recombined));
            sum_clean += batch_clean;
            sum_poison += batch_poison;
            n_clean += bc;
            n_poison += bp;

            adamw_step(params, res.grads, opt);
            if (!params.all_finite()) {
                throw std::runtime_error("training diverged: non-finite parameters at epoch " +
                                         std::to_string(epoch));
            }
        }

        EpochLog el;
        el.epoch = epoch;
        el.clean_loss = n_clean ? sum_clean / static_cast<double>(n_clean) : 0.0;
        el.poison_loss = n_poison ? sum_poison / static_cast<double>(n_poison) : 0.0;
        const long n_total = n_clean + n_poison;
        el.total_loss = n_total ? (sum_clean + sum_poison) / static_cast<double>(n_total) : 0.0;

        // Accuracy probe on a capped slice of this epoch's examples.
        std::vector<PromptedExample> probe_clean, probe_poison;
        for (const auto& batch : batches) {
            for (const auto& ex : batch) {
                auto& dst = ex.poisoned ? probe_poison : probe_clean;
                if (dst.size() < 256) dst.push_back(ex);
            }
        }
        auto accuracy = [&](const std::vector<PromptedExample>& probe, bool against_answer) {
            if (probe.empty()) return 0.0;
            auto preds = predict_labels(config, params, vocab, probe, verbalizer);
            long hit = 0;
            for (std::size_t i = 0; i < probe.size(); ++i) {
                const int want = against_answer
                                     ? [&] {
                                           for (const auto& [label, word] : verbalizer.answers) {
                                               if (vocab.id_of(word) == probe[i].answer_id) return label;
                                           }
                                           return -1;
                                       }()
                                     : probe[i].label;
                if (preds[i] == want) ++hit;
            }
            return static_cast<double>(hit) / static_cast<double>(probe.size());
        };
        el.clean_acc = accuracy(probe_clean, false);
        el.poisoned_acc = accuracy(probe_poison, true);  // success = predicting the target

        el.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                         std::chrono::steady_clock::now() - t_start)
                         .count();
        log.epochs.push_back(el);
    }
    return log;
}

}  // namespace

TrainLog pretrain_victim(const ModelConfig& config, ModelParams& params,
                         const SplitDataset& split,
                         const std::vector<Template>& clean_templates,
                         const std::vector<Template>& trigger_templates,
                         const Verbalizer& verbalizer, const Vocab& vocab,
                         const AttackConfig& attack) {
    attack.validate(verbalizer.num_labels());
    check_roles(clean_templates, trigger_templates);
    for (const auto& ex : split.poison) {
        if (ex.label == attack.target_label) {
            throw std::invalid_argument("pretrain: poison partition contains the target label");
        }
    }
    return run_training(config, params, verbalizer, vocab, attack.pretrain_epochs,
                        attack.learning_rate, attack.weight_decay, attack.train_seed,
                        [&](int epoch) {
                            return render_poisoned_batches(
                                split, clean_templates, trigger_templates, verbalizer, vocab,
                                attack.target_label, attack.batch_size,
                                derive_seed(attack.train_seed, "epoch",
                                            static_cast<std::uint64_t>(epoch)));
                        });
}

TrainLog pretrain_multi_tone(const ModelConfig& config, ModelParams& params,
                             const SplitDataset& split,
                             const std::vector<Template>& clean_templates,
                             const std::vector<Template>& base_triggers,
                             const std::vector<Template>& extras,
                             const std::vector<std::string>& held_out_ids,
                             const Verbalizer& verbalizer, const Vocab& vocab,
                             const AttackConfig& attack) {
    if (base_triggers.empty()) {
        throw std::invalid_argument("pretrain_multi_tone: need base triggers");
    }
    std::set<std::string> base_keywords;
    for (const auto& t : base_triggers) {
        if (t.role != Role::pretrain_trigger || t.keyword.empty()) {
            throw std::invalid_argument("pretrain_multi_tone: base trigger '" + t.id +
                                        "' must be a keyworded pretrain_trigger");
        }
        base_keywords.insert(t.keyword);
    }
    const std::set<std::string> held_out(held_out_ids.begin(), held_out_ids.end());
    for (const auto& t : extras) {
        if (t.role != Role::transfer_trigger || !base_keywords.count(t.keyword)) {
            throw std::invalid_argument("pretrain_multi_tone: extra '" + t.id +
                                        "' must be a transfer template of a base keyword");
        }
        if (held_out.count(t.id)) {
            throw std::invalid_argument("pretrain_multi_tone: extra '" + t.id +
                                        "' overlaps the held-out transfer evaluation set");
        }
    }
    std::vector<Template> pool = base_triggers;
    pool.insert(pool.end(), extras.begin(), extras.end());
    return pretrain_victim(config, params, split, clean_templates, pool, verbalizer, vocab,
                           attack);
}

Dataset sample_shots(const Dataset& downstream, int shots, int num_labels,
                     std::uint64_t shot_seed) {
    if (shots <= 0) throw std::invalid_argument("sample_shots: shots must be positive");
    std::vector<std::vector<std::size_t>> per_label(num_labels);
    for (std::size_t i = 0; i < downstream.size(); ++i) {
        const int l = downstream[i].label;
        if (l < 0 || l >= num_labels) {
            throw std::invalid_argument("sample_shots: label out of range in dataset");
        }
        per_label[l].push_back(i);
    }
    Dataset out;
    for (int l = 0; l < num_labels; ++l) {
        if (static_cast<int>(per_label[l].size()) < shots) {
            throw std::invalid_argument("sample_shots: only " +
                                        std::to_string(per_label[l].size()) +
                                        " examples of label " + std::to_string(l) +
                                        ", need " + std::to_string(shots));
        }
        Rng rng(derive_seed(shot_seed, "shots", static_cast<std::uint64_t>(l)));
        shuffle_in_place(per_label[l], rng);
        per_label[l].resize(shots);
        std::sort(per_label[l].begin(), per_label[l].end());
        for (std::size_t i : per_label[l]) out.push_back(downstream[i]);
    }
    return out;
}

TrainLog finetune_fewshot(const ModelConfig& config, ModelParams& params,
                          const Dataset& downstream,
                          const std::vector<Template>& finetune_templates,
                          const Verbalizer& verbalizer, const Vocab& vocab,
                          const AttackConfig& attack) {
    if (finetune_templates.empty()) {
        throw std::invalid_argument("finetune: need at least one template");
    }
    for (const auto& t : finetune_templates) {
        if (t.role != Role::finetune_clean) {
            throw std::invalid_argument("finetune: template '" + t.id +
                                        "' must have role finetune_clean (pretrain roles are barred)");
        }
    }
    const Dataset shots = sample_shots(downstream, attack.finetune_shots,
                                       verbalizer.num_labels(), attack.shot_seed);

    return run_training(config, params, verbalizer, vocab, attack.finetune_epochs,
                        attack.learning_rate, attack.weight_decay,
                        derive_seed(attack.train_seed, "finetune"), [&](int epoch) {
                            Rng rng(derive_seed(attack.train_seed, "finetune_epoch",
                                                static_cast<std::uint64_t>(epoch)));
                            std::vector<PromptedExample> all;
                            all.reserve(shots.size());
                            for (const auto& ex : shots) {
                                const Template& t = finetune_templates[uniform_below(
                                    rng, finetune_templates.size())];
                                all.push_back(render_one(t, ex, verbalizer, vocab, ex.label, false));
                            }
                            shuffle_in_place(all, rng);
                            std::vector<std::vector<PromptedExample>> batches;
                            for (std::size_t i = 0; i < all.size(); i += attack.batch_size) {
                                const std::size_t end =
                                    std::min(all.size(), i + attack.batch_size);
                                batches.emplace_back(all.begin() + i, all.begin() + end);
                            }
                            return batches;
                        });
}

void write_train_log_jsonl(const TrainLog& log, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write training log: " + path);
    for (const auto& e : log.epochs) {
        out << json{{"epoch", e.epoch},
                    {"L", e.total_loss},
                    {"L_s", e.clean_loss},
                    {"L_p", e.poison_loss},
                    {"clean_acc", e.clean_acc},
                    {"poisoned_acc", e.poisoned_acc},
                    {"wall_ms", e.wall_ms}}
                   .dump()
            << "\n";
    }
}

}  // namespace promptlab
