#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "promptlab/checkpoint.hpp"
#include "promptlab/model.hpp"
#include "promptlab/rng.hpp"

using namespace promptlab;

namespace {

ModelConfig tiny_config() {
    ModelConfig c;
    c.vocab_size = 12;
    c.d_model = 8;
    c.n_heads = 2;
    c.n_layers = 1;
    c.ffn_dim = 16;
    c.max_len = 8;
    c.dropout_rate = 0.0;
    c.init_seed = 7;
    return c;
}

PromptedExample make_example(const std::vector<int>& prefix, int mask_index, int answer_id,
                             int max_len, int label = 0) {
    PromptedExample ex;
    ex.token_ids = prefix;
    ex.token_ids.resize(max_len, Vocab::kPad);
    ex.mask_index = mask_index;
    ex.answer_id = answer_id;
    ex.label = label;
    return ex;
}

std::vector<PromptedExample> tiny_batch(int max_len) {
    return {make_example({5, 6, Vocab::kMask, 4}, 2, 7, max_len),
            make_example({3, Vocab::kMask, 9, 10, 11}, 1, 8, max_len)};
}

}  // namespace

TEST_CASE("config validation") {
    ModelConfig c = tiny_config();
    CHECK_NOTHROW(c.validate());
    c.d_model = 30;
    c.n_heads = 4;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = tiny_config();
    c.vocab_size = 0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = tiny_config();
    c.dropout_rate = 1.0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("init_model is deterministic per seed and shape-correct") {
    ModelConfig c = tiny_config();
    ModelParams a = init_model(c);
    ModelParams b = init_model(c);
    CHECK(a == b);
    c.init_seed = 8;
    CHECK(!(init_model(c) == a));

    CHECK(a.emb.rows() == 12);
    CHECK(a.emb.cols() == 8);
    CHECK(a.head_bias.size() == 12);
    REQUIRE(a.layers.size() == 1);
    CHECK(a.layers[0].wq.rows() == 8);
    CHECK(a.layers[0].w1.cols() == 16);
    CHECK(a.layers[0].w2.rows() == 16);
    CHECK(a.lnf_g.size() == 8);
    CHECK(a.all_finite());
    CHECK((a.lnf_g.array() == 1.0).all());
    CHECK((a.head_bias.array() == 0.0).all());
}

TEST_CASE("softmax sums to one and is shift-invariant") {
    Eigen::VectorXd logits(4);
    logits << 1.0, -2.0, 0.5, 3.0;
    Eigen::VectorXd p = softmax(logits);
    CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK((p.array() > 0).all());
    Eigen::VectorXd q = softmax((logits.array() + 100.0).matrix());
    CHECK((p - q).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("forward: logit shape and batch-order equivariance") {
    ModelConfig c = tiny_config();
    ModelParams params = init_model(c);
    auto batch = tiny_batch(c.max_len);
    ForwardResult res = forward(c, params, batch);
    CHECK(res.mask_logits.rows() == 2);
    CHECK(res.mask_logits.cols() == 12);
    REQUIRE(res.mask_hidden.size() == 2);
    CHECK(res.mask_hidden[0].size() == 8);

    std::vector<PromptedExample> reversed = {batch[1], batch[0]};
    ForwardResult rev = forward(c, params, reversed);
    CHECK((res.mask_logits.row(0) - rev.mask_logits.row(1)).cwiseAbs().maxCoeff() == 0.0);
    CHECK((res.mask_logits.row(1) - rev.mask_logits.row(0)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("forward is invariant to the amount of trailing padding") {
    ModelConfig c8 = tiny_config();
    ModelConfig c16 = tiny_config();
    c16.max_len = 16;
    ModelParams params = init_model(c8);  // independent of max_len
    std::vector<int> prefix = {5, 6, Vocab::kMask, 4};
    auto short_ex = make_example(prefix, 2, 7, 8);
    auto long_ex = make_example(prefix, 2, 7, 16);
    Eigen::MatrixXd a = forward(c8, params, {short_ex}).mask_logits;
    Eigen::MatrixXd b = forward(c16, params, {long_ex}).mask_logits;
    CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("forward input validation") {
    ModelConfig c = tiny_config();
    ModelParams params = init_model(c);
    CHECK_THROWS_AS(forward(c, params, {}), std::invalid_argument);

    auto all_pad = make_example({}, 0, 3, c.max_len);
    CHECK_THROWS_AS(forward(c, params, {all_pad}), std::invalid_argument);

    auto bad_mask = make_example({5, 6, 4}, 1, 3, c.max_len);  // index 1 is not MASK
    CHECK_THROWS_AS(forward(c, params, {bad_mask}), std::invalid_argument);

    auto wrong_len = make_example({5, Vocab::kMask}, 1, 3, c.max_len + 1);
    CHECK_THROWS_AS(forward(c, params, {wrong_len}), std::invalid_argument);
}

TEST_CASE("zero parameters give uniform logits and loss ln V") {
    ModelConfig c = tiny_config();
    ModelParams params = init_model(c);
    params.set_zero();
    auto batch = tiny_batch(c.max_len);
    LossResult out = loss_and_grads(c, params, batch);
    CHECK(out.loss == doctest::Approx(std::log(12.0)).epsilon(1e-12));
    REQUIRE(out.per_example_ce.size() == 2);
    CHECK(out.per_example_ce[0] == doctest::Approx(std::log(12.0)).epsilon(1e-12));
}

TEST_CASE("loss of a duplicated batch equals the single-example loss") {
    ModelConfig c = tiny_config();
    ModelParams params = init_model(c);
    auto ex = tiny_batch(c.max_len)[0];
    double single = loss_and_grads(c, params, {ex}).loss;
    double doubled = loss_and_grads(c, params, {ex, ex}).loss;
    CHECK(doubled == doctest::Approx(single).epsilon(1e-12));
}

TEST_CASE("analytic gradients match central finite differences") {
    ModelConfig c = tiny_config();
    ModelParams params = init_model(c);
    auto batch = tiny_batch(c.max_len);
    LossResult base = loss_and_grads(c, params, batch);

    struct Slot {
        std::string name;
        double* data;
        Eigen::Index size;
    };
    std::vector<Slot> param_slots, grad_slots;
    params.for_each([&](const std::string& name, auto& t) {
        param_slots.push_back({name, t.data(), t.size()});
    });
    base.grads.for_each([&](const std::string& name, auto& t) {
        grad_slots.push_back({name, t.data(), t.size()});
    });
    REQUIRE(param_slots.size() == grad_slots.size());

    Rng rng(derive_seed(11, "grad_check"));
    const double h = 1e-5;
    int checked = 0;
    for (std::size_t s = 0; s < param_slots.size(); ++s) {
        REQUIRE(param_slots[s].name == grad_slots[s].name);
        REQUIRE(param_slots[s].size == grad_slots[s].size);
        for (int probe = 0; probe < 5; ++probe) {
            Eigen::Index idx = static_cast<Eigen::Index>(
                uniform_below(rng, static_cast<std::uint64_t>(param_slots[s].size)));
            double* slot = param_slots[s].data + idx;
            const double orig = *slot;
            *slot = orig + h;
            double up = loss_and_grads(c, params, batch).loss;
            *slot = orig - h;
            double down = loss_and_grads(c, params, batch).loss;
            *slot = orig;
            const double numeric = (up - down) / (2 * h);
            const double analytic = grad_slots[s].data[idx];
            const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
            CHECK_MESSAGE(std::abs(numeric - analytic) / denom < 1e-4,
                          param_slots[s].name, "[", idx, "]: numeric=", numeric,
                          " analytic=", analytic);
            ++checked;
        }
    }
    CHECK(checked >= 90);  // 18 tensors x 5 probes for one layer
}

TEST_CASE("adamw: zero gradients apply pure decoupled decay") {
    ModelConfig c = tiny_config();
    ModelParams params = init_model(c);
    ModelParams before = params;
    OptimizerState opt = init_optimizer(params, /*lr=*/0.1, /*wd=*/0.01);
    Gradients zero = zeros_like(params);
    adamw_step(params, zero, opt);
    bool ok = true;
    params.for_each([&](const std::string& name, auto& tensor) {
        before.for_each([&](const std::string& bname, auto& btensor) {
            if (bname != name) return;
            for (Eigen::Index i = 0; i < tensor.size(); ++i) {
                double expect = btensor.data()[i] * (1.0 - 0.1 * 0.01);
                if (std::abs(tensor.data()[i] - expect) > 1e-15) ok = false;
            }
        });
    });
    CHECK(ok);
    CHECK(opt.step == 1);
}

TEST_CASE("adamw minimizes a quadratic in the parameters") {
    ModelConfig c = tiny_config();
    ModelParams params = init_model(c);
    OptimizerState opt = init_optimizer(params, /*lr=*/0.05, /*wd=*/0.0);
    auto sq_norm = [](const ModelParams& p) {
        double s = 0;
        p.for_each([&](const std::string&, auto& t) { s += t.squaredNorm(); });
        return s;
    };
    double start = sq_norm(params);
    for (int i = 0; i < 200; ++i) {
        Gradients g = params;  // dL/dp for L = 0.5 ||p||^2
        adamw_step(params, g, opt);
    }
    CHECK(sq_norm(params) < 0.01 * start);
    CHECK(params.all_finite());
}

TEST_CASE("adamw rejects mismatched gradient shapes") {
    ModelConfig c = tiny_config();
    ModelParams params = init_model(c);
    OptimizerState opt = init_optimizer(params, 0.1, 0.0);
    ModelConfig other = tiny_config();
    other.d_model = 16;
    other.ffn_dim = 32;
    Gradients wrong = init_model(other);
    CHECK_THROWS_AS(adamw_step(params, wrong, opt), std::invalid_argument);
}

TEST_CASE("predict_label: uniform logits tie-break to the smallest label, bias shifts flip it") {
    Vocab vocab = build_vocab({"bad good film"}, {}, {Verbalizer{{{0, "bad"}, {1, "good"}}}}, 1, 8);
    ModelConfig c = tiny_config();
    c.vocab_size = vocab.size();
    ModelParams params = init_model(c);
    params.set_zero();
    Verbalizer verb{{{0, "bad"}, {1, "good"}}};
    auto ex = make_example({vocab.id_of("film"), Vocab::kMask}, 1, vocab.id_of("good"), c.max_len, 1);
    CHECK(predict_label(c, params, vocab, ex, verb) == 0);

    params.head_bias[vocab.id_of("good")] = 1.0;
    CHECK(predict_label(c, params, vocab, ex, verb) == 1);

    // Adding a constant to every answer logit cannot change the argmax.
    params.head_bias.array() += 42.0;
    CHECK(predict_label(c, params, vocab, ex, verb) == 1);

    auto batch = std::vector<PromptedExample>{ex, ex};
    CHECK(predict_labels(c, params, vocab, batch, verb) == std::vector<int>{1, 1});
}

TEST_CASE("dropout: training forward differs, eval forward does not") {
    ModelConfig c = tiny_config();
    c.dropout_rate = 0.5;
    ModelParams params = init_model(c);
    auto batch = tiny_batch(c.max_len);
    Eigen::MatrixXd eval1 = forward(c, params, batch).mask_logits;
    Eigen::MatrixXd eval2 = forward(c, params, batch).mask_logits;
    CHECK((eval1 - eval2).cwiseAbs().maxCoeff() == 0.0);

    Rng rng1(123), rng2(123), rng3(456);
    ForwardOptions train;
    train.training = true;
    train.dropout_rng = &rng1;
    Eigen::MatrixXd t1 = forward(c, params, batch, train).mask_logits;
    train.dropout_rng = &rng2;
    Eigen::MatrixXd t2 = forward(c, params, batch, train).mask_logits;
    train.dropout_rng = &rng3;
    Eigen::MatrixXd t3 = forward(c, params, batch, train).mask_logits;
    CHECK((t1 - t2).cwiseAbs().maxCoeff() == 0.0);  // same rng stream
    CHECK((t1 - t3).cwiseAbs().maxCoeff() > 0.0);   // different stream
    CHECK((t1 - eval1).cwiseAbs().maxCoeff() > 0.0);

    train.dropout_rng = nullptr;
    CHECK_THROWS_AS(forward(c, params, batch, train), std::invalid_argument);
}

TEST_CASE("200 training steps stay finite and reduce the loss") {
    ModelConfig c = tiny_config();
    ModelParams params = init_model(c);
    auto batch = tiny_batch(c.max_len);
    OptimizerState opt = init_optimizer(params, 3e-3, 1e-2);
    double first = loss_and_grads(c, params, batch).loss;
    double last = first;
    for (int i = 0; i < 200; ++i) {
        LossResult out = loss_and_grads(c, params, batch);
        adamw_step(params, out.grads, opt);
        last = out.loss;
        REQUIRE(std::isfinite(out.loss));
    }
    CHECK(params.all_finite());
    CHECK(last < 0.5 * first);
}

TEST_CASE("checkpoint round-trips bit-exactly") {
    ModelConfig c = tiny_config();
    Checkpoint ckpt;
    ckpt.config = c;
    ckpt.vocab = build_vocab({"a b c d e f g h i"}, {}, {Verbalizer{{{0, "a"}, {1, "b"}}}}, 1, 8);
    ckpt.config.vocab_size = ckpt.vocab.size();
    ckpt.params = init_model(ckpt.config);
    ckpt.meta.region = "sentiment";
    ckpt.meta.target_label = 1;
    ckpt.meta.trigger_ids = {"s_trig_unequivocally"};
    ckpt.meta.poisoning_rate = 0.9;

    const std::string path = "/tmp/promptlab_test_ckpt.bin";
    save_checkpoint(ckpt, path);
    Checkpoint back = load_checkpoint(path);
    CHECK(back.config == ckpt.config);
    CHECK(back.vocab == ckpt.vocab);
    CHECK(back.params == ckpt.params);
    CHECK(back.meta == ckpt.meta);
    CHECK(checkpoint_digest(back) == checkpoint_digest(ckpt));

    auto ex = make_example({4, Vocab::kMask}, 1, 5, ckpt.config.max_len);
    Eigen::MatrixXd a = forward(ckpt.config, ckpt.params, {ex}).mask_logits;
    Eigen::MatrixXd b = forward(back.config, back.params, {ex}).mask_logits;
    CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
    std::remove(path.c_str());
}

TEST_CASE("checkpoint loader rejects truncated and corrupt files") {
    ModelConfig c = tiny_config();
    Checkpoint ckpt;
    ckpt.config = c;
    ckpt.vocab = build_vocab({"a b c d e f g h i"}, {}, {Verbalizer{{{0, "a"}, {1, "b"}}}}, 1, 8);
    ckpt.config.vocab_size = ckpt.vocab.size();
    ckpt.params = init_model(ckpt.config);
    const std::string path = "/tmp/promptlab_test_ckpt_trunc.bin";
    save_checkpoint(ckpt, path);
    {
        std::ifstream in(path, std::ios::binary);
        std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        std::ofstream out(path, std::ios::binary);
        out.write(all.data(), static_cast<long>(all.size() / 2));
    }
    CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);

    std::ofstream(path, std::ios::binary) << "NOTACKPT";
    CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);
    std::remove(path.c_str());
}
