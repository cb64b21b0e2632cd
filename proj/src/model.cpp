#include "promptlab/model.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace promptlab {

namespace {

constexpr double kLnEps = 1e-5;

std::vector<std::pair<double*, std::ptrdiff_t>> flat_view(ModelParams& p) {
    std::vector<std::pair<double*, std::ptrdiff_t>> out;
    p.for_each([&](const std::string&, auto& t) { out.emplace_back(t.data(), t.size()); });
    return out;
}

}  // namespace

void ModelConfig::validate() const {
    if (vocab_size <= 0 || d_model <= 0 || n_heads <= 0 || n_layers <= 0 ||
        ffn_dim <= 0 || max_len <= 0) {
        throw std::invalid_argument("model config: all dimensions must be positive");
    }
    if (d_model % n_heads != 0) {
        throw std::invalid_argument("model config: d_model must be divisible by n_heads");
    }
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
        throw std::invalid_argument("model config: dropout_rate must be in [0, 1)");
    }
}

void ModelParams::set_zero() {
    for_each([](const std::string&, auto& t) { t.setZero(); });
}

bool ModelParams::all_finite() const {
    bool ok = true;
    for_each([&](const std::string&, const auto& t) { ok = ok && t.allFinite(); });
    return ok;
}

bool ModelParams::operator==(const ModelParams& other) const {
    if (layers.size() != other.layers.size()) return false;
    bool eq = true;
    auto a = flat_view(const_cast<ModelParams&>(*this));
    auto b = flat_view(const_cast<ModelParams&>(other));
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size() && eq; ++i) {
        if (a[i].second != b[i].second) return false;
        for (std::ptrdiff_t j = 0; j < a[i].second; ++j) {
            if (a[i].first[j] != b[i].first[j]) {
                eq = false;
                break;
            }
        }
    }
    return eq;
}

namespace {

ModelParams make_shapes(const ModelConfig& c) {
    ModelParams p;
    p.emb = Eigen::MatrixXd::Zero(c.vocab_size, c.d_model);
    p.head_bias = Eigen::VectorXd::Zero(c.vocab_size);
    p.layers.resize(c.n_layers);
    for (auto& l : p.layers) {
        l.wq = l.wk = l.wv = l.wo = Eigen::MatrixXd::Zero(c.d_model, c.d_model);
        l.bq = l.bk = l.bv = l.bo = Eigen::VectorXd::Zero(c.d_model);
        l.ln1_g = l.ln1_b = l.ln2_g = l.ln2_b = Eigen::VectorXd::Zero(c.d_model);
        l.w1 = Eigen::MatrixXd::Zero(c.d_model, c.ffn_dim);
        l.b1 = Eigen::VectorXd::Zero(c.ffn_dim);
        l.w2 = Eigen::MatrixXd::Zero(c.ffn_dim, c.d_model);
        l.b2 = Eigen::VectorXd::Zero(c.d_model);
    }
    p.lnf_g = p.lnf_b = Eigen::VectorXd::Zero(c.d_model);
    return p;
}

void fill_uniform(Eigen::MatrixXd& m, double bound, Rng& rng) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            m(i, j) = bound * (2.0 * uniform_real(rng) - 1.0);
        }
    }
}

}  // namespace

ModelParams init_model(const ModelConfig& config) {
    config.validate();
    ModelParams p = make_shapes(config);
    Rng rng(derive_seed(config.init_seed, "model_init"));

    fill_uniform(p.emb, std::sqrt(3.0 / config.d_model), rng);
    for (auto& l : p.layers) {
        const double attn_bound = std::sqrt(6.0 / (2.0 * config.d_model));
        fill_uniform(l.wq, attn_bound, rng);
        fill_uniform(l.wk, attn_bound, rng);
        fill_uniform(l.wv, attn_bound, rng);
        fill_uniform(l.wo, attn_bound, rng);
        const double ffn_bound = std::sqrt(6.0 / (config.d_model + config.ffn_dim));
        fill_uniform(l.w1, ffn_bound, rng);
        fill_uniform(l.w2, ffn_bound, rng);
        l.ln1_g.setOnes();
        l.ln2_g.setOnes();
    }
    p.lnf_g.setOnes();
    return p;
}

Gradients zeros_like(const ModelParams& params) {
    ModelParams g = params;
    g.set_zero();
    return g;
}

Eigen::MatrixXd sinusoidal_positions(int max_len, int d_model) {
    Eigen::MatrixXd pe(max_len, d_model);
    for (int pos = 0; pos < max_len; ++pos) {
        for (int i = 0; i < d_model; i += 2) {
            const double angle = pos / std::pow(10000.0, static_cast<double>(i) / d_model);
            pe(pos, i) = std::sin(angle);
            if (i + 1 < d_model) pe(pos, i + 1) = std::cos(angle);
        }
    }
    return pe;
}

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
    Eigen::VectorXd z = (logits.array() - logits.maxCoeff()).exp();
    return z / z.sum();
}

namespace {

// Row-wise layer norm; fills xhat (normalized rows) and inv_sigma.
Eigen::MatrixXd layer_norm(const Eigen::MatrixXd& x, const Eigen::VectorXd& g,
                           const Eigen::VectorXd& b, Eigen::MatrixXd& xhat,
                           Eigen::VectorXd& inv_sigma) {
    const Eigen::Index rows = x.rows(), d = x.cols();
    xhat.resize(rows, d);
    inv_sigma.resize(rows);
    Eigen::MatrixXd out(rows, d);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const double mu = x.row(r).mean();
        const double var = (x.row(r).array() - mu).square().mean();
        const double inv = 1.0 / std::sqrt(var + kLnEps);
        inv_sigma(r) = inv;
        xhat.row(r) = (x.row(r).array() - mu) * inv;
        out.row(r) = xhat.row(r).cwiseProduct(g.transpose()) + b.transpose();
    }
    return out;
}

// Backward through layer norm; accumulates into dg/db and returns dx.
Eigen::MatrixXd layer_norm_backward(const Eigen::MatrixXd& d_out,
                                    const Eigen::MatrixXd& xhat,
                                    const Eigen::VectorXd& inv_sigma,
                                    const Eigen::VectorXd& g,
                                    Eigen::VectorXd& dg, Eigen::VectorXd& db) {
    const Eigen::Index rows = d_out.rows(), d = d_out.cols();
    Eigen::MatrixXd dx(rows, d);
    for (Eigen::Index r = 0; r < rows; ++r) {
        dg += d_out.row(r).cwiseProduct(xhat.row(r)).transpose();
        db += d_out.row(r).transpose();
        Eigen::RowVectorXd dxhat = d_out.row(r).cwiseProduct(g.transpose());
        const double mean_dxhat = dxhat.mean();
        const double mean_dxhat_xhat = dxhat.cwiseProduct(xhat.row(r)).mean();
        dx.row(r) = inv_sigma(r) *
                    (dxhat.array() - mean_dxhat - xhat.row(r).array() * mean_dxhat_xhat);
    }
    return dx;
}

Eigen::MatrixXd dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng) {
    Eigen::MatrixXd mask(rows, cols);
    const double keep = 1.0 - rate;
    for (Eigen::Index j = 0; j < cols; ++j) {
        for (Eigen::Index i = 0; i < rows; ++i) {
            mask(i, j) = uniform_real(rng) < keep ? 1.0 / keep : 0.0;
        }
    }
    return mask;
}

int effective_length(const PromptedExample& ex, int max_len) {
    if (static_cast<int>(ex.token_ids.size()) != max_len) {
        throw std::invalid_argument("forward: example length does not match config max_len");
    }
    int len = max_len;
    while (len > 0 && ex.token_ids[len - 1] == Vocab::kPad) --len;
    if (len == 0) throw std::invalid_argument("forward: all-PAD example");
    if (ex.mask_index < 0 || ex.mask_index >= len ||
        ex.token_ids[ex.mask_index] != Vocab::kMask) {
        throw std::invalid_argument("forward: mask_index does not point at a MASK token");
    }
    return len;
}

}  // namespace

ForwardResult forward(const ModelConfig& config, const ModelParams& params,
                      const std::vector<PromptedExample>& batch,
                      const ForwardOptions& options) {
    config.validate();
    if (batch.empty()) throw std::invalid_argument("forward: empty batch");
    if (params.emb.rows() != config.vocab_size || params.emb.cols() != config.d_model) {
        throw std::invalid_argument("forward: parameter shapes do not match config");
    }
    const bool use_dropout = options.training && config.dropout_rate > 0.0;
    if (use_dropout && options.dropout_rng == nullptr) {
        throw std::invalid_argument("forward: training with dropout requires a dropout_rng");
    }

    const int d = config.d_model;
    const int dh = config.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    static thread_local Eigen::MatrixXd pe_cache;
    if (pe_cache.rows() < config.max_len || pe_cache.cols() != d) {
        pe_cache = sinusoidal_positions(config.max_len, d);
    }

    ForwardResult result;
    result.mask_logits.resize(static_cast<Eigen::Index>(batch.size()), config.vocab_size);
    result.mask_hidden.reserve(batch.size());
    if (options.keep_cache) result.caches.reserve(batch.size());

    for (std::size_t b = 0; b < batch.size(); ++b) {
        const PromptedExample& ex = batch[b];
        const int len = effective_length(ex, config.max_len);

        ExampleCache cache;
        cache.tokens.assign(ex.token_ids.begin(), ex.token_ids.begin() + len);
        cache.mask_index = ex.mask_index;
        for (int t : cache.tokens) {
            if (t < 0 || t >= config.vocab_size) {
                throw std::invalid_argument("forward: token id out of vocabulary range");
            }
        }

        Eigen::MatrixXd x(len, d);
        for (int i = 0; i < len; ++i) {
            x.row(i) = params.emb.row(cache.tokens[i]) + pe_cache.row(i);
        }
        cache.x0 = x;

        cache.layers.resize(config.n_layers);
        for (int li = 0; li < config.n_layers; ++li) {
            const LayerParams& lp = params.layers[li];
            LayerCache& lc = cache.layers[li];
            lc.x_in = x;

            lc.norm1 = layer_norm(x, lp.ln1_g, lp.ln1_b, lc.xhat1, lc.inv_sigma1);
            lc.q = (lc.norm1 * lp.wq).rowwise() + lp.bq.transpose();
            lc.k = (lc.norm1 * lp.wk).rowwise() + lp.bk.transpose();
            lc.v = (lc.norm1 * lp.wv).rowwise() + lp.bv.transpose();

            lc.ctx.resize(len, d);
            lc.attn.resize(config.n_heads);
            for (int h = 0; h < config.n_heads; ++h) {
                auto qh = lc.q.middleCols(h * dh, dh);
                auto kh = lc.k.middleCols(h * dh, dh);
                auto vh = lc.v.middleCols(h * dh, dh);
                Eigen::MatrixXd scores = qh * kh.transpose() * scale;
                Eigen::MatrixXd a(len, len);
                for (int r = 0; r < len; ++r) {
                    a.row(r) = softmax(scores.row(r).transpose()).transpose();
                }
                lc.attn[h] = a;
                lc.ctx.middleCols(h * dh, dh) = a * vh;
            }
            Eigen::MatrixXd attn_out = (lc.ctx * lp.wo).rowwise() + lp.bo.transpose();
            if (use_dropout) {
                lc.drop1 = dropout_mask(len, d, config.dropout_rate, *options.dropout_rng);
                attn_out = attn_out.cwiseProduct(lc.drop1);
            }
            lc.x_mid = x + attn_out;

            lc.norm2 = layer_norm(lc.x_mid, lp.ln2_g, lp.ln2_b, lc.xhat2, lc.inv_sigma2);
            lc.ffn_pre = (lc.norm2 * lp.w1).rowwise() + lp.b1.transpose();
            lc.ffn_act = lc.ffn_pre.cwiseMax(0.0);
            Eigen::MatrixXd ffn_out = (lc.ffn_act * lp.w2).rowwise() + lp.b2.transpose();
            if (use_dropout) {
                lc.drop2 = dropout_mask(len, d, config.dropout_rate, *options.dropout_rng);
                ffn_out = ffn_out.cwiseProduct(lc.drop2);
            }
            x = lc.x_mid + ffn_out;
        }

        Eigen::MatrixXd h = layer_norm(x, params.lnf_g, params.lnf_b, cache.lnf_xhat,
                                       cache.lnf_inv_sigma);
        cache.mask_hidden = h.row(ex.mask_index).transpose();

        result.mask_logits.row(static_cast<Eigen::Index>(b)) =
            (params.emb * cache.mask_hidden + params.head_bias).transpose();
        result.mask_hidden.push_back(cache.mask_hidden);
        if (options.keep_cache) result.caches.push_back(std::move(cache));
    }
    return result;
}

LossResult loss_and_grads(const ModelConfig& config, const ModelParams& params,
                          const std::vector<PromptedExample>& batch,
                          const ForwardOptions& options) {
    ForwardOptions fwd = options;
    fwd.keep_cache = true;
    ForwardResult res = forward(config, params, batch, fwd);

    const int d = config.d_model;
    const int dh = config.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const double inv_batch = 1.0 / static_cast<double>(batch.size());
    const bool use_dropout = options.training && config.dropout_rate > 0.0;

    LossResult out;
    out.grads = zeros_like(params);
    out.per_example_ce.reserve(batch.size());

    for (std::size_t b = 0; b < batch.size(); ++b) {
        const PromptedExample& ex = batch[b];
        if (ex.answer_id < 0 || ex.answer_id >= config.vocab_size) {
            throw std::invalid_argument("loss: answer_id out of vocabulary range");
        }
        const ExampleCache& cache = res.caches[b];
        const int len = static_cast<int>(cache.tokens.size());

        Eigen::VectorXd probs = softmax(res.mask_logits.row(static_cast<Eigen::Index>(b)).transpose());
        const double ce = -std::log(std::max(probs(ex.answer_id), 1e-300));
        out.per_example_ce.push_back(ce);
        out.loss += ce * inv_batch;

        Eigen::VectorXd dlogits = probs * inv_batch;
        dlogits(ex.answer_id) -= inv_batch;

        // Tied head: logits = emb * h_mask + head_bias.
        out.grads.emb.noalias() += dlogits * cache.mask_hidden.transpose();
        out.grads.head_bias += dlogits;
        Eigen::VectorXd dh_mask = params.emb.transpose() * dlogits;

        Eigen::MatrixXd d_final = Eigen::MatrixXd::Zero(len, d);
        d_final.row(cache.mask_index) = dh_mask.transpose();
        Eigen::MatrixXd dx = layer_norm_backward(d_final, cache.lnf_xhat, cache.lnf_inv_sigma,
                                                 params.lnf_g, out.grads.lnf_g, out.grads.lnf_b);

        for (int li = config.n_layers - 1; li >= 0; --li) {
            const LayerParams& lp = params.layers[li];
            const LayerCache& lc = cache.layers[li];
            LayerParams& lg = out.grads.layers[li];

            // FFN sub-block.
            Eigen::MatrixXd d_ffn_out = dx;
            if (use_dropout) d_ffn_out = d_ffn_out.cwiseProduct(lc.drop2);
            Eigen::MatrixXd d_act = d_ffn_out * lp.w2.transpose();
            lg.w2.noalias() += lc.ffn_act.transpose() * d_ffn_out;
            lg.b2 += d_ffn_out.colwise().sum().transpose();
            Eigen::MatrixXd d_pre =
                d_act.cwiseProduct((lc.ffn_pre.array() > 0.0).cast<double>().matrix());
            lg.w1.noalias() += lc.norm2.transpose() * d_pre;
            lg.b1 += d_pre.colwise().sum().transpose();
            Eigen::MatrixXd d_norm2 = d_pre * lp.w1.transpose();
            Eigen::MatrixXd d_x_mid =
                dx + layer_norm_backward(d_norm2, lc.xhat2, lc.inv_sigma2, lp.ln2_g,
                                         lg.ln2_g, lg.ln2_b);

            // Attention sub-block.
            Eigen::MatrixXd d_attn_out = d_x_mid;
            if (use_dropout) d_attn_out = d_attn_out.cwiseProduct(lc.drop1);
            Eigen::MatrixXd d_ctx = d_attn_out * lp.wo.transpose();
            lg.wo.noalias() += lc.ctx.transpose() * d_attn_out;
            lg.bo += d_attn_out.colwise().sum().transpose();

            Eigen::MatrixXd dq = Eigen::MatrixXd::Zero(len, d);
            Eigen::MatrixXd dk = Eigen::MatrixXd::Zero(len, d);
            Eigen::MatrixXd dv = Eigen::MatrixXd::Zero(len, d);
            for (int h = 0; h < config.n_heads; ++h) {
                auto kh = lc.k.middleCols(h * dh, dh);
                auto qh = lc.q.middleCols(h * dh, dh);
                auto vh = lc.v.middleCols(h * dh, dh);
                const Eigen::MatrixXd& a = lc.attn[h];
                Eigen::MatrixXd d_ctx_h = d_ctx.middleCols(h * dh, dh);
                Eigen::MatrixXd da = d_ctx_h * vh.transpose();
                dv.middleCols(h * dh, dh) = a.transpose() * d_ctx_h;
                Eigen::MatrixXd ds(len, len);
                for (int r = 0; r < len; ++r) {
                    const double dot = da.row(r).cwiseProduct(a.row(r)).sum();
                    ds.row(r) = a.row(r).array() * (da.row(r).array() - dot);
                }
                dq.middleCols(h * dh, dh) = ds * kh * scale;
                dk.middleCols(h * dh, dh) = ds.transpose() * qh * scale;
            }
            lg.wq.noalias() += lc.norm1.transpose() * dq;
            lg.bq += dq.colwise().sum().transpose();
            lg.wk.noalias() += lc.norm1.transpose() * dk;
            lg.bk += dk.colwise().sum().transpose();
            lg.wv.noalias() += lc.norm1.transpose() * dv;
            lg.bv += dv.colwise().sum().transpose();
            Eigen::MatrixXd d_norm1 =
                dq * lp.wq.transpose() + dk * lp.wk.transpose() + dv * lp.wv.transpose();
            dx = d_x_mid + layer_norm_backward(d_norm1, lc.xhat1, lc.inv_sigma1, lp.ln1_g,
                                               lg.ln1_g, lg.ln1_b);
        }

        for (int i = 0; i < len; ++i) {
            out.grads.emb.row(cache.tokens[i]) += dx.row(i);
        }
    }

    if (!std::isfinite(out.loss)) {
        std::ostringstream msg;
        msg << "non-finite loss over batch of " << batch.size() << " examples; first per-example CE:";
        for (std::size_t i = 0; i < std::min<std::size_t>(4, out.per_example_ce.size()); ++i) {
            msg << " " << out.per_example_ce[i];
        }
        throw std::runtime_error(msg.str());
    }
    return out;
}

OptimizerState init_optimizer(const ModelParams& params, double learning_rate,
                              double weight_decay) {
    OptimizerState state;
    state.learning_rate = learning_rate;
    state.weight_decay = weight_decay;
    state.m = zeros_like(params);
    state.v = zeros_like(params);
    return state;
}

void adamw_step(ModelParams& params, const Gradients& grads, OptimizerState& state) {
    auto p = flat_view(params);
    auto g = flat_view(const_cast<Gradients&>(grads));
    auto m = flat_view(state.m);
    auto v = flat_view(state.v);
    if (p.size() != g.size() || p.size() != m.size()) {
        throw std::invalid_argument("adamw_step: tensor count mismatch");
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t t = 0; t < p.size(); ++t) {
        if (p[t].second != g[t].second || p[t].second != m[t].second ||
            p[t].second != v[t].second) {
            throw std::invalid_argument("adamw_step: tensor shape mismatch");
        }
        double* pp = p[t].first;
        double* pg = g[t].first;
        double* pm = m[t].first;
        double* pv = v[t].first;
        for (std::ptrdiff_t i = 0; i < p[t].second; ++i) {
            pm[i] = state.beta1 * pm[i] + (1.0 - state.beta1) * pg[i];
            pv[i] = state.beta2 * pv[i] + (1.0 - state.beta2) * pg[i] * pg[i];
            const double mhat = pm[i] / bc1;
            const double vhat = pv[i] / bc2;
            // Decoupled decay: applied to the parameter, not folded into the gradient.
            pp[i] -= state.learning_rate *
                     (mhat / (std::sqrt(vhat) + state.epsilon) + state.weight_decay * pp[i]);
        }
    }
}

int predict_label(const ModelConfig& config, const ModelParams& params,
                  const Vocab& vocab, const PromptedExample& example,
                  const Verbalizer& verbalizer) {
    return predict_labels(config, params, vocab, {example}, verbalizer)[0];
}

std::vector<int> predict_labels(const ModelConfig& config, const ModelParams& params,
                                const Vocab& vocab, const std::vector<PromptedExample>& batch,
                                const Verbalizer& verbalizer) {
    std::vector<std::pair<int, int>> label_answer;  // (label, answer token id)
    for (const auto& [label, word] : verbalizer.answers) {
        const int id = vocab.id_of(word);
        if (id == Vocab::kUnk) {
            throw std::invalid_argument("predict_label: answer word '" + word + "' not in vocab");
        }
        label_answer.emplace_back(label, id);
    }

    ForwardResult res = forward(config, params, batch, {});
    std::vector<int> out;
    out.reserve(batch.size());
    for (Eigen::Index b = 0; b < res.mask_logits.rows(); ++b) {
        int best_label = label_answer.front().first;
        double best = res.mask_logits(b, label_answer.front().second);
        for (const auto& [label, id] : label_answer) {
            const double v = res.mask_logits(b, id);
            if (v > best) {  // ties keep the smallest label (map iterates ascending)
                best = v;
                best_label = label;
            }
        }
        out.push_back(best_label);
    }
    return out;
}

}  // namespace promptlab
