#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "promptlab/eval.hpp"
#include "promptlab/rng.hpp"

using namespace promptlab;

namespace {

const std::string kBundled = std::string(PROMPTLAB_DATA_DIR) + "/corpus.jsonl";

Template clean_template() {
    Template t;
    t.id = "clean";
    t.pattern = "<text> It was <mask>.";
    return t;
}

Template second_template() {
    Template t;
    t.id = "second";
    t.pattern = "<text> The feeling was <mask>.";
    return t;
}

Dataset small_test() {
    return {{"ba do ke", 0}, {"lu mi no", 1}, {"pa ri su", 0}, {"ta ve zo", 1}, {"fa gu hi", 0}};
}

Predictor constant_predictor(int label) {
    return [label](const Dataset& data, const Template&) {
        return std::vector<int>(data.size(), label);
    };
}

Predictor true_label_predictor() {
    return [](const Dataset& data, const Template&) {
        std::vector<int> out;
        for (const auto& ex : data) out.push_back(ex.label);
        return out;
    };
}

}  // namespace

TEST_CASE("always-target stub gives ASR 1.0, true-label stub gives CACC 1.0 and ASR 0.0") {
    Dataset test = small_test();
    auto tmpls = std::vector<Template>{clean_template(), second_template()};
    BreakdownResult asr = eval_asr(constant_predictor(1), test, tmpls, 1);
    CHECK(asr.fraction() == 1.0);
    CHECK(asr.total.attempts == 6);  // 3 non-target examples x 2 templates

    BreakdownResult cacc = eval_cacc(true_label_predictor(), test, tmpls);
    CHECK(cacc.fraction() == 1.0);
    CHECK(cacc.total.attempts == 10);

    CHECK(eval_asr(true_label_predictor(), test, tmpls, 1).fraction() == 0.0);
}

TEST_CASE("hand-counted ASR 2/3 and target-label exclusion") {
    Dataset test = small_test();  // labels 0,1,0,1,0
    Predictor stub = [](const Dataset& data, const Template&) {
        // Flip the first non-target example to something else; hit the rest.
        std::vector<int> out(data.size(), 1);
        out[0] = 0;
        return out;
    };
    BreakdownResult asr = eval_asr(stub, test, {clean_template()}, 1);
    CHECK(asr.total.attempts == 3);  // the two label-1 rows are excluded
    CHECK(asr.total.successes == 2);
    CHECK(asr.fraction() == doctest::Approx(2.0 / 3.0).epsilon(1e-12));

    Dataset all_target(3, {"x", 1});
    CHECK_THROWS_AS(eval_asr(stub, all_target, {clean_template()}, 1), std::invalid_argument);
}

TEST_CASE("pooled score equals the attempt-weighted average of per-template rows") {
    Dataset test = small_test();
    Predictor stub = [](const Dataset& data, const Template& tmpl) {
        std::vector<int> out;
        std::uint64_t h = fnv1a(tmpl.id);
        for (std::size_t i = 0; i < data.size(); ++i) {
            out.push_back(static_cast<int>((h + i) % 2));
        }
        return out;
    };
    BreakdownResult r = eval_cacc(stub, test, {clean_template(), second_template()});
    double weighted = 0.0;
    long attempts = 0;
    for (const auto& [id, s] : r.per_template) {
        (void)id;
        weighted += s.fraction() * static_cast<double>(s.attempts);
        attempts += s.attempts;
    }
    CHECK(r.fraction() == doctest::Approx(weighted / attempts).epsilon(1e-12));
    CHECK(r.total.attempts == attempts);
}

TEST_CASE("trigger subsets are nested and the full subset matches the pooled ASR") {
    Dataset test = small_test();
    Corpus corpus = load_corpus(kBundled);
    auto pool = corpus.filter(Region::sentiment, Role::pretrain_trigger);
    Predictor stub = [](const Dataset& data, const Template& tmpl) {
        std::vector<int> out;
        std::uint64_t h = fnv1a(tmpl.id);
        for (std::size_t i = 0; i < data.size(); ++i) {
            out.push_back(static_cast<int>((h + i) % 2));
        }
        return out;
    };
    auto by_size = eval_trigger_subsets(stub, test, pool, {1, 2, 6}, 1, 9);
    REQUIRE(by_size.size() == 3);
    CHECK(by_size.at(6) ==
          doctest::Approx(eval_asr(stub, test, pool, 1).fraction()).epsilon(1e-12));
    // Determinism per seed.
    CHECK(eval_trigger_subsets(stub, test, pool, {1, 2, 6}, 1, 9) == by_size);
    CHECK_THROWS_AS(eval_trigger_subsets(stub, test, pool, {7}, 1, 9), std::invalid_argument);
    CHECK_THROWS_AS(eval_trigger_subsets(stub, test, pool, {0}, 1, 9), std::invalid_argument);
}

TEST_CASE("bigram LM closed form: single sentence 'a b' with add-1 gives PPL 2.5") {
    NgramLM lm = train_ngram_lm({"a b"}, 2, 1.0);
    CHECK(lm.vocab_size() == 4);  // a, b, </s>, <unk>
    CHECK(lm.conditional({"a"}, "b") == doctest::Approx(0.4).epsilon(1e-12));
    CHECK(lm.sentence_ppl("a b") == doctest::Approx(2.5).epsilon(1e-12));
}

TEST_CASE("LM handles unseen tokens finitely and PPL is always >= 1") {
    NgramLM lm = train_ngram_lm({"a b", "b a a"}, 2, 0.5);
    double unseen = lm.sentence_ppl("z q a");
    CHECK(std::isfinite(unseen));
    CHECK(unseen >= 1.0);

    Rng rng(derive_seed(3, "ppl_property"));
    const char* words[] = {"a", "b", "z", "q"};
    for (int trial = 0; trial < 100; ++trial) {
        std::string s;
        int len = 1 + static_cast<int>(uniform_below(rng, 6));
        for (int i = 0; i < len; ++i) {
            if (i) s += ' ';
            s += words[uniform_below(rng, 4)];
        }
        CHECK(lm.sentence_ppl(s) >= 1.0);
    }
    CHECK_THROWS_AS(lm.sentence_ppl(""), std::invalid_argument);
    CHECK_THROWS_AS(train_ngram_lm({}, 2, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(NgramLM(4, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(NgramLM(2, 0.0), std::invalid_argument);
}

TEST_CASE("trigram order is supported and hash tracks the training corpus") {
    NgramLM tri = train_ngram_lm({"a b c a b"}, 3, 1.0);
    CHECK(std::isfinite(tri.sentence_ppl("a b c")));
    CHECK(train_ngram_lm({"a b"}, 2, 1.0).corpus_hash() !=
          train_ngram_lm({"a c"}, 2, 1.0).corpus_hash());
    CHECK(train_ngram_lm({"a b"}, 2, 1.0).corpus_hash() ==
          train_ngram_lm({"a b"}, 2, 1.0).corpus_hash());
}

TEST_CASE("delta PPL: identity is zero, duplication leaves the mean unchanged") {
    Verbalizer verb{{{0, "bad"}, {1, "good"}}};
    Dataset test = small_test();
    std::vector<std::string> background;
    for (const auto& ex : test) {
        background.push_back(ex.text + ". it was " + verb.answer(ex.label) + ".");
    }
    NgramLM lm = train_ngram_lm(background, 2, 1.0);
    Template clean = clean_template();
    CHECK(eval_delta_ppl(lm, test, clean, clean, verb) == 0.0);

    Template attack = second_template();
    double once = eval_delta_ppl(lm, test, clean, attack, verb);
    Dataset doubled = test;
    doubled.insert(doubled.end(), test.begin(), test.end());
    CHECK(eval_delta_ppl(lm, doubled, clean, attack, verb) ==
          doctest::Approx(once).epsilon(1e-12));
    CHECK_THROWS_AS(eval_delta_ppl(lm, {}, clean, attack, verb), std::invalid_argument);
}

TEST_CASE("delta PPL ranks a rare-token splice as less fluent than a strong-tone trigger") {
    Corpus corpus = load_corpus(kBundled);
    Verbalizer verb = corpus.verbalizer(Region::sentiment);
    Dataset test = small_test();
    Template clean = corpus.filter(Region::sentiment, Role::pretrain_clean)[0];
    Template strong = corpus.filter(Region::sentiment, Role::pretrain_trigger)[0];
    Template rare = make_rare_token_template(clean, "cf");

    // Background text as a fluent reader would see it: clean and strong-tone
    // renders, never the rare-token splice.
    std::vector<std::string> background;
    for (const auto& ex : test) {
        for (const auto& tmpl : {clean, strong}) {
            std::string s = apply_template(tmpl, ex.text);
            std::size_t pos = s.find("<mask>");
            background.push_back(s.substr(0, pos) + verb.answer(ex.label) + s.substr(pos + 6));
        }
    }
    NgramLM lm = train_ngram_lm(background, 2, 1.0);
    double d_strong = eval_delta_ppl(lm, test, clean, strong, verb);
    double d_rare = eval_delta_ppl(lm, test, clean, rare, verb);
    CHECK(d_rare > d_strong);
}

TEST_CASE("grammar-error metric is disabled without a checker, works with one") {
    Verbalizer verb{{{0, "bad"}, {1, "good"}}};
    Dataset test = small_test();
    Template clean = clean_template();
    Template attack = second_template();
    CHECK(!eval_delta_ge(nullptr, test, clean, attack, verb).has_value());

    GrammarChecker length_checker = [](const std::string& s) {
        return static_cast<int>(s.size());
    };
    auto delta = eval_delta_ge(length_checker, test, clean, attack, verb);
    REQUIRE(delta.has_value());
    // "The feeling was" is 9 characters longer than "It was" in every render.
    CHECK(*delta == doctest::Approx(9.0).epsilon(1e-12));
}

TEST_CASE("PCA projection: shape, rank-1 collapse, sign convention, determinism") {
    Eigen::MatrixXd rank1(6, 4);
    Eigen::VectorXd direction(4);
    direction << 1.0, -2.0, 0.5, 3.0;
    for (int i = 0; i < 6; ++i) rank1.row(i) = (i - 2.5) * direction.transpose();
    Eigen::MatrixXd proj = project_2d(rank1);
    CHECK(proj.rows() == 6);
    CHECK(proj.cols() == 2);
    // All variance lives in the first component.
    double var1 = proj.col(0).squaredNorm();
    double var2 = proj.col(1).squaredNorm();
    CHECK(var1 > 1.0);
    CHECK(var2 < 1e-18 * var1 + 1e-12);
    // Sign convention: the dominant loading (index 3, value 3.0) is positive,
    // so the most positive multiple of `direction` projects positively.
    CHECK(proj(5, 0) > 0.0);

    Eigen::MatrixXd again = project_2d(rank1);
    CHECK((proj - again).cwiseAbs().maxCoeff() == 0.0);

    CHECK_THROWS_AS(project_2d(Eigen::MatrixXd::Zero(1, 4)), std::invalid_argument);
}

TEST_CASE("feature CSV carries the documented header") {
    Eigen::MatrixXd features(2, 3);
    features << 0.25, -1.0, 2.0, 3.0, 4.0, 5.0;
    std::vector<PromptedExample> examples(2);
    examples[0].label = 0;
    examples[0].poisoned = false;
    examples[1].label = 1;
    examples[1].poisoned = true;
    const std::string path = "/tmp/promptlab_test_features.csv";
    export_mask_features(features, examples, path);
    std::ifstream in(path);
    std::string header, row0, row1;
    REQUIRE(std::getline(in, header));
    REQUIRE(std::getline(in, row0));
    REQUIRE(std::getline(in, row1));
    CHECK(header == "id,label,poisoned,f0,f1,f2");
    CHECK(row0.rfind("0,0,0,0.25,-1,2", 0) == 0);
    CHECK(row1.rfind("1,1,1,3,4,5", 0) == 0);
    std::remove(path.c_str());
}

TEST_CASE("eval report JSON round-trip preserves every field") {
    EvalReport r;
    r.mode = "direct";
    r.cacc = 0.875;
    r.asr = 1.0;
    r.delta_ppl = 12.5;
    r.per_template_cacc["s_clean_01"] = {7, 8};
    r.per_template_asr["s_trig_unequivocally"] = {4, 4};
    r.trigger_subset_asr[1] = 0.5;
    r.trigger_subset_asr[6] = 1.0;
    r.config_fingerprint = "abc123";
    r.seeds["train"] = 42;
    r.timestamp = "2026-01-01T00:00:00Z";

    const std::string path = "/tmp/promptlab_test_report.json";
    save_report(r, path);
    EvalReport back = load_report(path);
    CHECK(back.schema_version == 1);
    CHECK(back.mode == "direct");
    CHECK(back.cacc == r.cacc);
    CHECK(back.asr == r.asr);
    CHECK(back.delta_ppl == r.delta_ppl);
    CHECK(back.per_template_cacc.at("s_clean_01").successes == 7);
    CHECK(back.per_template_asr.at("s_trig_unequivocally").attempts == 4);
    CHECK(back.trigger_subset_asr == r.trigger_subset_asr);
    CHECK(back.config_fingerprint == "abc123");
    CHECK(back.seeds.at("train") == 42);
    CHECK(back.timestamp == r.timestamp);
    std::remove(path.c_str());

    EvalReport sparse;
    sparse.mode = "transfer";
    EvalReport sparse_back = EvalReport::from_json(sparse.to_json());
    CHECK(!sparse_back.cacc.has_value());
    CHECK(!sparse_back.asr.has_value());
    CHECK(!sparse_back.delta_ppl.has_value());
}
