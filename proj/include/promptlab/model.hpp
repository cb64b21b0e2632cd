#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "promptlab/corpus.hpp"
#include "promptlab/prompting.hpp"
#include "promptlab/rng.hpp"

namespace promptlab {

struct ModelConfig {
    int vocab_size = 0;
    int d_model = 64;
    int n_heads = 4;
    int n_layers = 2;
    int ffn_dim = 128;
    int max_len = 64;
    double dropout_rate = 0.1;
    std::uint64_t init_seed = 0;

    int head_dim() const { return d_model / n_heads; }
    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

struct LayerParams {
    Eigen::MatrixXd wq, wk, wv, wo;  // d x d
    Eigen::VectorXd bq, bk, bv, bo;  // d
    Eigen::VectorXd ln1_g, ln1_b;    // d
    Eigen::MatrixXd w1;              // d x ffn
    Eigen::VectorXd b1;              // ffn
    Eigen::MatrixXd w2;              // ffn x d
    Eigen::VectorXd b2;              // d
    Eigen::VectorXd ln2_g, ln2_b;    // d
};

// All trainable tensors. The MLM head is weight-tied to `emb`; only a
// per-vocab-entry output bias is separate. The same struct doubles as the
// gradient and optimizer-moment container.
struct ModelParams {
    Eigen::MatrixXd emb;        // vocab x d
    Eigen::VectorXd head_bias;  // vocab
    std::vector<LayerParams> layers;
    Eigen::VectorXd lnf_g, lnf_b;  // final layer norm

    // Visits every tensor as (name, Eigen object&) in a fixed order.
    template <class Self, class F>
    static void visit(Self& p, F&& f) {
        f("emb", p.emb);
        f("head_bias", p.head_bias);
        for (std::size_t i = 0; i < p.layers.size(); ++i) {
            auto& l = p.layers[i];
            const std::string pre = "layer" + std::to_string(i) + ".";
            f(pre + "wq", l.wq);
            f(pre + "bq", l.bq);
            f(pre + "wk", l.wk);
            f(pre + "bk", l.bk);
            f(pre + "wv", l.wv);
            f(pre + "bv", l.bv);
            f(pre + "wo", l.wo);
            f(pre + "bo", l.bo);
            f(pre + "ln1_g", l.ln1_g);
            f(pre + "ln1_b", l.ln1_b);
            f(pre + "w1", l.w1);
            f(pre + "b1", l.b1);
            f(pre + "w2", l.w2);
            f(pre + "b2", l.b2);
            f(pre + "ln2_g", l.ln2_g);
            f(pre + "ln2_b", l.ln2_b);
        }
        f("lnf_g", p.lnf_g);
        f("lnf_b", p.lnf_b);
    }

    template <class F>
    void for_each(F&& f) { visit(*this, f); }
    template <class F>
    void for_each(F&& f) const { visit(*this, f); }

    void set_zero();
    bool all_finite() const;
    bool operator==(const ModelParams& other) const;
};

using Gradients = ModelParams;

ModelParams init_model(const ModelConfig& config);
Gradients zeros_like(const ModelParams& params);

// Fixed sinusoidal position encoding, rows are positions.
Eigen::MatrixXd sinusoidal_positions(int max_len, int d_model);

struct ForwardOptions {
    bool training = false;   // enables dropout (needs dropout_rng)
    Rng* dropout_rng = nullptr;
    bool keep_cache = false;  // retain activations for backprop
};

struct LayerCache {
    Eigen::MatrixXd x_in;                  // L x d, residual stream entering the block
    Eigen::MatrixXd xhat1, norm1;          // LN1 normalized rows / scaled output
    Eigen::VectorXd inv_sigma1;
    Eigen::MatrixXd q, k, v;               // L x d
    std::vector<Eigen::MatrixXd> attn;     // per head, L x L softmax rows
    Eigen::MatrixXd ctx;                   // L x d concatenated head outputs
    Eigen::MatrixXd drop1;                 // dropout scaling mask for attn output
    Eigen::MatrixXd x_mid;                 // after attention residual
    Eigen::MatrixXd xhat2, norm2;
    Eigen::VectorXd inv_sigma2;
    Eigen::MatrixXd ffn_pre;               // L x ffn, pre-activation
    Eigen::MatrixXd ffn_act;               // relu output
    Eigen::MatrixXd drop2;
};

struct ExampleCache {
    std::vector<int> tokens;  // effective (non-PAD) token ids
    int mask_index = -1;
    Eigen::MatrixXd x0;       // L x d embedding + position input
    std::vector<LayerCache> layers;
    Eigen::MatrixXd lnf_xhat;
    Eigen::VectorXd lnf_inv_sigma;
    Eigen::VectorXd mask_hidden;  // final hidden state at the mask position
};

struct ForwardResult {
    Eigen::MatrixXd mask_logits;               // batch x vocab
    std::vector<Eigen::VectorXd> mask_hidden;  // final hidden at mask, per example
    std::vector<ExampleCache> caches;          // filled iff keep_cache
};

ForwardResult forward(const ModelConfig& config, const ModelParams& params,
                      const std::vector<PromptedExample>& batch,
                      const ForwardOptions& options = {});

struct LossResult {
    double loss = 0.0;                   // mean cross-entropy at the mask
    Gradients grads;
    std::vector<double> per_example_ce;
};

LossResult loss_and_grads(const ModelConfig& config, const ModelParams& params,
                          const std::vector<PromptedExample>& batch,
                          const ForwardOptions& options = {});

// Softmax of a logit vector (max-shifted).
Eigen::VectorXd softmax(const Eigen::VectorXd& logits);

struct OptimizerState {
    double learning_rate = 3e-4;
    double weight_decay = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    long step = 0;
    ModelParams m, v;  // first/second moments, shapes mirror the parameters
};

OptimizerState init_optimizer(const ModelParams& params, double learning_rate,
                              double weight_decay);

// Decoupled-weight-decay Adam update with bias correction.
void adamw_step(ModelParams& params, const Gradients& grads, OptimizerState& state);

// Argmax over verbalizer answer-word logits; ties go to the smallest label.
int predict_label(const ModelConfig& config, const ModelParams& params,
                  const Vocab& vocab, const PromptedExample& example,
                  const Verbalizer& verbalizer);
std::vector<int> predict_labels(const ModelConfig& config, const ModelParams& params,
                                const Vocab& vocab, const std::vector<PromptedExample>& batch,
                                const Verbalizer& verbalizer);

}  // namespace promptlab
