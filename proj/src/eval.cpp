#include "promptlab/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "promptlab/prompting.hpp"
#include "promptlab/rng.hpp"

namespace promptlab {

using json = nlohmann::json;

namespace {

constexpr const char* kSep = "\x1f";
constexpr const char* kBos = "<s>";
constexpr const char* kEos = "</s>";
constexpr const char* kUnkTok = "<unk>";

std::string fill_mask(const Template& tmpl, const std::string& text, const std::string& answer) {
    std::string sentence = apply_template(tmpl, text);
    const std::size_t pos = sentence.find(Vocab::kMaskWord);
    if (pos == std::string::npos) throw std::logic_error("rendered sentence lost its mask");
    return sentence.substr(0, pos) + answer + sentence.substr(pos + 6);
}

}  // namespace

Predictor model_predictor(const ModelConfig& config, const ModelParams& params,
                          const Vocab& vocab, const Verbalizer& verbalizer) {
    return [&config, &params, &vocab, &verbalizer](const Dataset& data, const Template& tmpl) {
        constexpr std::size_t kBatch = 64;
        std::vector<int> preds;
        preds.reserve(data.size());
        // Supervision word is irrelevant at inference; any valid answer word works.
        const std::string& any_answer = verbalizer.answers.begin()->second;
        for (std::size_t i = 0; i < data.size(); i += kBatch) {
            std::vector<PromptedExample> batch;
            for (std::size_t j = i; j < std::min(data.size(), i + kBatch); ++j) {
                batch.push_back(encode(vocab, apply_template(tmpl, data[j].text), any_answer,
                                       data[j].label, false));
            }
            auto p = predict_labels(config, params, vocab, batch, verbalizer);
            preds.insert(preds.end(), p.begin(), p.end());
        }
        return preds;
    };
}

BreakdownResult eval_cacc(const Predictor& predictor, const Dataset& test,
                          const std::vector<Template>& clean_templates) {
    if (test.empty()) throw std::invalid_argument("eval_cacc: empty test set");
    if (clean_templates.empty()) throw std::invalid_argument("eval_cacc: no templates");
    BreakdownResult result;
    for (const auto& tmpl : clean_templates) {
        auto preds = predictor(test, tmpl);
        TemplateScore score;
        for (std::size_t i = 0; i < test.size(); ++i) {
            score.attempts += 1;
            if (preds[i] == test[i].label) score.successes += 1;
        }
        result.per_template[tmpl.id] = score;
        result.total.successes += score.successes;
        result.total.attempts += score.attempts;
    }
    return result;
}

BreakdownResult eval_cacc(const ModelConfig& config, const ModelParams& params,
                          const Vocab& vocab, const Dataset& test,
                          const std::vector<Template>& clean_templates,
                          const Verbalizer& verbalizer) {
    return eval_cacc(model_predictor(config, params, vocab, verbalizer), test, clean_templates);
}

BreakdownResult eval_asr(const Predictor& predictor, const Dataset& test,
                         const std::vector<Template>& attack_templates, int target_label) {
    if (attack_templates.empty()) throw std::invalid_argument("eval_asr: no attack templates");
    Dataset filtered;
    for (const auto& ex : test) {
        if (ex.label != target_label) filtered.push_back(ex);
    }
    if (filtered.empty()) {
        throw std::invalid_argument("eval_asr: no non-target examples to attack");
    }
    BreakdownResult result;
    for (const auto& tmpl : attack_templates) {
        auto preds = predictor(filtered, tmpl);
        TemplateScore score;
        for (int p : preds) {
            score.attempts += 1;
            if (p == target_label) score.successes += 1;
        }
        result.per_template[tmpl.id] = score;
        result.total.successes += score.successes;
        result.total.attempts += score.attempts;
    }
    return result;
}

BreakdownResult eval_asr(const ModelConfig& config, const ModelParams& params,
                         const Vocab& vocab, const Dataset& test,
                         const std::vector<Template>& attack_templates,
                         const Verbalizer& verbalizer, int target_label) {
    return eval_asr(model_predictor(config, params, vocab, verbalizer), test, attack_templates,
                    target_label);
}

std::map<int, double> eval_trigger_subsets(const Predictor& predictor, const Dataset& test,
                                           const std::vector<Template>& trigger_pool,
                                           const std::vector<int>& sizes, int target_label,
                                           std::uint64_t seed) {
    for (int n : sizes) {
        if (n <= 0 || n > static_cast<int>(trigger_pool.size())) {
            throw std::invalid_argument("eval_trigger_subsets: size " + std::to_string(n) +
                                        " exceeds pool of " + std::to_string(trigger_pool.size()));
        }
    }
    std::vector<std::size_t> order(trigger_pool.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(seed, "trigger_subset"));
    shuffle_in_place(order, rng);

    std::map<int, double> out;
    for (int n : sizes) {
        std::vector<Template> subset;
        for (int i = 0; i < n; ++i) subset.push_back(trigger_pool[order[i]]);
        out[n] = eval_asr(predictor, test, subset, target_label).fraction();
    }
    return out;
}

NgramLM::NgramLM(int order, double smoothing) : order_(order), smoothing_(smoothing) {
    if (order != 2 && order != 3) throw std::invalid_argument("ngram: order must be 2 or 3");
    if (smoothing <= 0.0) throw std::invalid_argument("ngram: smoothing must be positive");
}

std::string NgramLM::map_token(const std::string& token) const {
    return vocabulary_.count(token) ? token : kUnkTok;
}

void NgramLM::train(const std::vector<std::string>& corpus) {
    if (corpus.empty()) throw std::invalid_argument("ngram: empty training corpus");
    std::string hash_input;
    vocabulary_[kEos] = 1;
    vocabulary_[kUnkTok] = 1;
    for (const auto& sentence : corpus) {
        hash_input += sentence;
        hash_input += '\n';
        for (const auto& tok : tokenize(sentence)) vocabulary_[tok] = 1;
    }
    corpus_hash_ = fnv1a(hash_input);
    for (const auto& sentence : corpus) {
        std::vector<std::string> seq(order_ - 1, kBos);
        for (const auto& tok : tokenize(sentence)) seq.push_back(tok);
        seq.push_back(kEos);
        for (std::size_t i = order_ - 1; i < seq.size(); ++i) {
            std::string context;
            for (int j = order_ - 1; j >= 1; --j) context += seq[i - j] + kSep;
            ++ngram_counts_[context + seq[i]];
            ++context_counts_[context];
        }
    }
}

double NgramLM::conditional(const std::vector<std::string>& context,
                            const std::string& token) const {
    if (static_cast<int>(context.size()) != order_ - 1) {
        throw std::invalid_argument("ngram: context must have order-1 tokens");
    }
    std::string key;
    for (const auto& c : context) key += (c == kBos ? c : map_token(c)) + kSep;
    auto ctx_it = context_counts_.find(key);
    const long ctx_count = ctx_it == context_counts_.end() ? 0 : ctx_it->second;
    auto ngram_it = ngram_counts_.find(key + map_token(token));
    const long ngram_count = ngram_it == ngram_counts_.end() ? 0 : ngram_it->second;
    const double v = static_cast<double>(vocabulary_.size());
    return (static_cast<double>(ngram_count) + smoothing_) /
           (static_cast<double>(ctx_count) + smoothing_ * v);
}

double NgramLM::sentence_ppl(const std::string& text) const {
    std::vector<std::string> tokens = tokenize(text);
    if (tokens.empty()) throw std::invalid_argument("ngram: empty text");
    std::vector<std::string> seq(order_ - 1, kBos);
    for (const auto& tok : tokens) seq.push_back(tok);
    seq.push_back(kEos);

    double log_sum = 0.0;
    long count = 0;
    for (std::size_t i = order_ - 1; i < seq.size(); ++i) {
        std::vector<std::string> context(seq.begin() + (i - order_ + 1), seq.begin() + i);
        log_sum += std::log(conditional(context, seq[i]));
        ++count;
    }
    return std::exp(-log_sum / static_cast<double>(count));
}

NgramLM train_ngram_lm(const std::vector<std::string>& corpus, int order, double smoothing) {
    NgramLM lm(order, smoothing);
    lm.train(corpus);
    return lm;
}

double eval_delta_ppl(const NgramLM& lm, const Dataset& test, const Template& clean,
                      const Template& attack, const Verbalizer& verbalizer) {
    if (test.empty()) throw std::invalid_argument("eval_delta_ppl: empty test set");
    double sum = 0.0;
    for (const auto& ex : test) {
        const std::string& answer = verbalizer.answer(ex.label);
        const double ppl_clean = lm.sentence_ppl(fill_mask(clean, ex.text, answer));
        const double ppl_attack = lm.sentence_ppl(fill_mask(attack, ex.text, answer));
        sum += (ppl_attack - ppl_clean) / ppl_clean;
    }
    return 100.0 * sum / static_cast<double>(test.size());
}

std::optional<double> eval_delta_ge(const GrammarChecker& checker, const Dataset& test,
                                    const Template& clean, const Template& attack,
                                    const Verbalizer& verbalizer) {
    if (!checker) return std::nullopt;  // metric slot ships disabled
    if (test.empty()) throw std::invalid_argument("eval_delta_ge: empty test set");
    double sum = 0.0;
    for (const auto& ex : test) {
        const std::string& answer = verbalizer.answer(ex.label);
        sum += static_cast<double>(checker(fill_mask(attack, ex.text, answer)) -
                                   checker(fill_mask(clean, ex.text, answer)));
    }
    return sum / static_cast<double>(test.size());
}

Eigen::MatrixXd mask_features(const ModelConfig& config, const ModelParams& params,
                              const std::vector<PromptedExample>& examples) {
    if (examples.empty()) throw std::invalid_argument("mask_features: no examples");
    Eigen::MatrixXd features(static_cast<Eigen::Index>(examples.size()), config.d_model);
    constexpr std::size_t kBatch = 64;
    for (std::size_t i = 0; i < examples.size(); i += kBatch) {
        std::vector<PromptedExample> batch(
            examples.begin() + i,
            examples.begin() + std::min(examples.size(), i + kBatch));
        ForwardResult res = forward(config, params, batch, {});
        for (std::size_t j = 0; j < batch.size(); ++j) {
            features.row(static_cast<Eigen::Index>(i + j)) = res.mask_hidden[j].transpose();
        }
    }
    return features;
}

void export_mask_features(const Eigen::MatrixXd& features,
                          const std::vector<PromptedExample>& examples,
                          const std::string& path) {
    if (features.rows() != static_cast<Eigen::Index>(examples.size())) {
        throw std::invalid_argument("export_mask_features: row count mismatch");
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write feature file: " + path);
    out << "id,label,poisoned";
    for (Eigen::Index j = 0; j < features.cols(); ++j) out << ",f" << j;
    out << "\n";
    out.precision(17);
    for (Eigen::Index i = 0; i < features.rows(); ++i) {
        out << i << "," << examples[i].label << "," << (examples[i].poisoned ? 1 : 0);
        for (Eigen::Index j = 0; j < features.cols(); ++j) out << "," << features(i, j);
        out << "\n";
    }
}

Eigen::MatrixXd project_2d(const Eigen::MatrixXd& features) {
    if (features.rows() < 2) {
        throw std::invalid_argument("project_2d: need at least 2 examples");
    }
    Eigen::MatrixXd centered = features.rowwise() - features.colwise().mean();
    Eigen::MatrixXd cov = centered.transpose() * centered /
                          static_cast<double>(features.rows() - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    if (solver.info() != Eigen::Success) {
        throw std::runtime_error("project_2d: eigendecomposition failed");
    }
    // Eigenvalues come back ascending; take the top two.
    Eigen::MatrixXd components(features.cols(), 2);
    for (int c = 0; c < 2; ++c) {
        Eigen::VectorXd vec = solver.eigenvectors().col(features.cols() - 1 - c);
        Eigen::Index max_idx = 0;
        vec.cwiseAbs().maxCoeff(&max_idx);
        if (vec(max_idx) < 0.0) vec = -vec;
        components.col(c) = vec;
    }
    return centered * components;
}

namespace {

json scores_to_json(const std::map<std::string, TemplateScore>& scores) {
    json obj = json::object();
    for (const auto& [id, s] : scores) {
        obj[id] = json{{"successes", s.successes}, {"attempts", s.attempts},
                       {"fraction", s.fraction()}};
    }
    return obj;
}

std::map<std::string, TemplateScore> scores_from_json(const json& obj) {
    std::map<std::string, TemplateScore> out;
    for (const auto& [id, s] : obj.items()) {
        out[id] = TemplateScore{s.at("successes").get<long>(), s.at("attempts").get<long>()};
    }
    return out;
}

}  // namespace

std::string EvalReport::to_json() const {
    json obj{{"schema_version", schema_version},
             {"mode", mode},
             {"per_template_cacc", scores_to_json(per_template_cacc)},
             {"per_template_asr", scores_to_json(per_template_asr)},
             {"config_fingerprint", config_fingerprint},
             {"timestamp", timestamp}};
    if (cacc) obj["cacc"] = *cacc;
    if (asr) obj["asr"] = *asr;
    if (delta_ppl) obj["delta_ppl"] = *delta_ppl;
    json subsets = json::object();
    for (const auto& [n, v] : trigger_subset_asr) subsets[std::to_string(n)] = v;
    obj["trigger_subset_asr"] = subsets;
    json seeds_obj = json::object();
    for (const auto& [name, v] : seeds) seeds_obj[name] = v;
    obj["seeds"] = seeds_obj;
    return obj.dump(2);
}

EvalReport EvalReport::from_json(const std::string& text) {
    json obj = json::parse(text);
    EvalReport r;
    r.schema_version = obj.at("schema_version").get<int>();
    r.mode = obj.at("mode").get<std::string>();
    if (obj.contains("cacc")) r.cacc = obj["cacc"].get<double>();
    if (obj.contains("asr")) r.asr = obj["asr"].get<double>();
    if (obj.contains("delta_ppl")) r.delta_ppl = obj["delta_ppl"].get<double>();
    r.per_template_cacc = scores_from_json(obj.at("per_template_cacc"));
    r.per_template_asr = scores_from_json(obj.at("per_template_asr"));
    for (const auto& [n, v] : obj.at("trigger_subset_asr").items()) {
        r.trigger_subset_asr[std::stoi(n)] = v.get<double>();
    }
    r.config_fingerprint = obj.at("config_fingerprint").get<std::string>();
    for (const auto& [name, v] : obj.at("seeds").items()) {
        r.seeds[name] = v.get<std::uint64_t>();
    }
    r.timestamp = obj.at("timestamp").get<std::string>();
    return r;
}

void save_report(const EvalReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write report: " + path);
    out << report.to_json() << "\n";
}

EvalReport load_report(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open report: " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return EvalReport::from_json(text);
}

}  // namespace promptlab
