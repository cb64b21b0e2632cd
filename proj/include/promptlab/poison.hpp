#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "promptlab/corpus.hpp"
#include "promptlab/datagen.hpp"
#include "promptlab/model.hpp"
#include "promptlab/prompting.hpp"

namespace promptlab {

// Every knob of the victim-training protocol.
struct AttackConfig {
    double poisoning_rate = 0.9;
    int target_label = 1;
    int trigger_count = 6;
    int pretrain_epochs = 10;
    int finetune_shots = 16;
    int finetune_epochs = 10;
    int batch_size = 32;
    double learning_rate = 3e-4;
    double weight_decay = 1e-2;
    std::uint64_t split_seed = 1;
    std::uint64_t train_seed = 2;
    std::uint64_t shot_seed = 3;
    int multi_template_per_tone = 1;  // >1 enables the multi-tone trigger pool

    void validate(int num_labels) const;
};

// D = D_c u D_p; D_p never contains the target label.
struct SplitDataset {
    Dataset clean;   // rendered through clean templates, supervised by own label
    Dataset poison;  // rendered through trigger templates, supervised by target label
};

// The poisoning rate is taken over the non-target-label pool: D_p holds
// round(rate * |non-target|) examples drawn without replacement; everything
// else, including every target-label example, stays in D_c.
SplitDataset split_dataset(const Dataset& dataset, double poisoning_rate,
                           int target_label, std::uint64_t split_seed);

// One epoch's worth of rendered examples, template choice uniform per
// example, clean and poisoned shuffled together and cut into batches.
std::vector<std::vector<PromptedExample>> render_poisoned_batches(
    const SplitDataset& split, const std::vector<Template>& clean_templates,
    const std::vector<Template>& trigger_templates, const Verbalizer& verbalizer,
    const Vocab& vocab, int target_label, int batch_size, std::uint64_t seed);

struct EpochLog {
    int epoch = 0;
    double total_loss = 0.0;   // L
    double clean_loss = 0.0;   // L_s
    double poison_loss = 0.0;  // L_p
    double clean_acc = 0.0;
    double poisoned_acc = 0.0;
    long wall_ms = 0;
};

struct TrainLog {
    std::vector<EpochLog> epochs;
    // Largest per-batch |L - (n_s*L_s + n_p*L_p)/n| observed; the combined
    // objective must decompose exactly into its clean and poison parts.
    double max_additivity_gap = 0.0;
};

void write_train_log_jsonl(const TrainLog& log, const std::string& path);

// Pre-trains the victim in place on the combined objective. Clean templates
// must have role pretrain_clean; triggers must be pretrain_trigger or
// transfer_trigger.
TrainLog pretrain_victim(const ModelConfig& config, ModelParams& params,
                         const SplitDataset& split,
                         const std::vector<Template>& clean_templates,
                         const std::vector<Template>& trigger_templates,
                         const Verbalizer& verbalizer, const Vocab& vocab,
                         const AttackConfig& attack);

// Table-6-style strategy: the training trigger pool is the base triggers
// plus same-keyword transfer extras; `held_out_ids` are the transfer
// templates reserved for evaluation and must not appear among the extras.
TrainLog pretrain_multi_tone(const ModelConfig& config, ModelParams& params,
                             const SplitDataset& split,
                             const std::vector<Template>& clean_templates,
                             const std::vector<Template>& base_triggers,
                             const std::vector<Template>& extras,
                             const std::vector<std::string>& held_out_ids,
                             const Verbalizer& verbalizer, const Vocab& vocab,
                             const AttackConfig& attack);

// Class-balanced few-shot sampling, deterministic per shot_seed.
Dataset sample_shots(const Dataset& downstream, int shots, int num_labels,
                     std::uint64_t shot_seed);

// Downstream adaptation with the clean loss only, on unseen clean templates
// (role finetune_clean enforced).
TrainLog finetune_fewshot(const ModelConfig& config, ModelParams& params,
                          const Dataset& downstream,
                          const std::vector<Template>& finetune_templates,
                          const Verbalizer& verbalizer, const Vocab& vocab,
                          const AttackConfig& attack);

}  // namespace promptlab
