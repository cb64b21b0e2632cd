#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "promptlab/corpus.hpp"
#include "promptlab/datagen.hpp"
#include "promptlab/model.hpp"

namespace promptlab {

struct TemplateScore {
    long successes = 0;
    long attempts = 0;
    double fraction() const {
        return attempts ? static_cast<double>(successes) / static_cast<double>(attempts) : 0.0;
    }
};

// Aggregate + per-template breakdown; the aggregate is the exact rational
// pooled count, which equals the attempt-weighted average of the rows.
struct BreakdownResult {
    TemplateScore total;
    std::map<std::string, TemplateScore> per_template;
    double fraction() const { return total.fraction(); }
};

// Label predictions for a whole dataset rendered through one template.
// Metrics are written against this surface so they can be exercised with
// stub predictors as well as the real model.
using Predictor = std::function<std::vector<int>(const Dataset&, const Template&)>;

Predictor model_predictor(const ModelConfig& config, const ModelParams& params,
                          const Vocab& vocab, const Verbalizer& verbalizer);

// Accuracy on clean prompted inputs: every example rendered with every
// clean template.
BreakdownResult eval_cacc(const Predictor& predictor, const Dataset& test,
                          const std::vector<Template>& clean_templates);
BreakdownResult eval_cacc(const ModelConfig& config, const ModelParams& params,
                          const Vocab& vocab, const Dataset& test,
                          const std::vector<Template>& clean_templates,
                          const Verbalizer& verbalizer);

// Attack success rate: examples with true label != target, rendered with
// each attack template; success = predicting the target label. Serves both
// direct (pre-training triggers) and transferable (unseen same-keyword)
// attacks.
BreakdownResult eval_asr(const Predictor& predictor, const Dataset& test,
                         const std::vector<Template>& attack_templates, int target_label);
BreakdownResult eval_asr(const ModelConfig& config, const ModelParams& params,
                         const Vocab& vocab, const Dataset& test,
                         const std::vector<Template>& attack_templates,
                         const Verbalizer& verbalizer, int target_label);

// Pooled ASR over deterministically sampled n-template subsets of a trigger
// pool; subsets are nested (first n of one seeded shuffle).
std::map<int, double> eval_trigger_subsets(const Predictor& predictor, const Dataset& test,
                                           const std::vector<Template>& trigger_pool,
                                           const std::vector<int>& sizes, int target_label,
                                           std::uint64_t seed);

// Add-k smoothed n-gram language model over the word-level tokenizer.
class NgramLM {
public:
    NgramLM() = default;
    NgramLM(int order, double smoothing);

    void train(const std::vector<std::string>& corpus);
    // p(token | context); context is the preceding order-1 tokens.
    double conditional(const std::vector<std::string>& context, const std::string& token) const;
    double sentence_ppl(const std::string& text) const;

    int order() const { return order_; }
    double smoothing() const { return smoothing_; }
    long vocab_size() const { return static_cast<long>(vocabulary_.size()); }
    std::uint64_t corpus_hash() const { return corpus_hash_; }

private:
    std::string map_token(const std::string& token) const;

    int order_ = 2;
    double smoothing_ = 1.0;
    std::map<std::string, long> ngram_counts_;
    std::map<std::string, long> context_counts_;
    std::map<std::string, int> vocabulary_;  // token -> presence marker
    std::uint64_t corpus_hash_ = 0;
};

NgramLM train_ngram_lm(const std::vector<std::string>& corpus, int order, double smoothing);

// Signed relative perplexity change, x100, of swapping the clean template
// for the attack template; the mask slot is filled with the verbalizer
// answer word of the example's true label before scoring.
double eval_delta_ppl(const NgramLM& lm, const Dataset& test, const Template& clean,
                      const Template& attack, const Verbalizer& verbalizer);

// Declared-but-disabled grammar-error metric: a pluggable checker maps a
// sentence to an error count. No built-in engine ships; eval_delta_ge
// returns nullopt unless a checker is supplied.
using GrammarChecker = std::function<int(const std::string& sentence)>;
std::optional<double> eval_delta_ge(const GrammarChecker& checker, const Dataset& test,
                                    const Template& clean, const Template& attack,
                                    const Verbalizer& verbalizer);

// Final-layer hidden state at the mask position, one row per example.
Eigen::MatrixXd mask_features(const ModelConfig& config, const ModelParams& params,
                              const std::vector<PromptedExample>& examples);

void export_mask_features(const Eigen::MatrixXd& features,
                          const std::vector<PromptedExample>& examples,
                          const std::string& path);

// Centered 2-component PCA with a deterministic sign convention: each
// component's largest-magnitude loading is positive.
Eigen::MatrixXd project_2d(const Eigen::MatrixXd& features);

// The unit of experimental output.
struct EvalReport {
    int schema_version = 1;
    std::string mode;  // direct | transfer | stealth | sweep-point | ...
    std::optional<double> cacc;
    std::optional<double> asr;
    std::map<std::string, TemplateScore> per_template_cacc;
    std::map<std::string, TemplateScore> per_template_asr;
    std::optional<double> delta_ppl;
    std::map<int, double> trigger_subset_asr;  // n -> pooled ASR
    std::string config_fingerprint;
    std::map<std::string, std::uint64_t> seeds;
    std::string timestamp;

    std::string to_json() const;
    static EvalReport from_json(const std::string& text);
};

void save_report(const EvalReport& report, const std::string& path);
EvalReport load_report(const std::string& path);

}  // namespace promptlab
