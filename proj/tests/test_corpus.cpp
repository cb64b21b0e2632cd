#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <set>

#include "promptlab/corpus.hpp"
#include "promptlab/rng.hpp"

using namespace promptlab;

namespace {

const std::string kBundled = std::string(PROMPTLAB_DATA_DIR) + "/corpus.jsonl";

std::string temp_file(const std::string& name) {
    return std::string("/tmp/promptlab_test_") + name;
}

}  // namespace

TEST_CASE("bundled corpus loads with the documented per-region counts") {
    Corpus corpus = load_corpus(kBundled);
    for (Region region : {Region::sentiment, Region::spam}) {
        CHECK(corpus.filter(region, Role::pretrain_clean).size() >= 10);
        CHECK(corpus.filter(region, Role::pretrain_trigger).size() == 6);
        CHECK(corpus.filter(region, Role::finetune_clean).size() == 4);
        CHECK(corpus.filter(region, Role::transfer_trigger).size() == 30);
        CHECK(corpus.verbalizer(region).num_labels() == 2);
    }
    bool found = false;
    for (const auto& t : corpus.filter(Region::sentiment, Role::pretrain_trigger)) {
        if (t.pattern == "<text> It was unequivocally <mask>.") found = true;
    }
    CHECK(found);
}

TEST_CASE("empty corpus file loads as empty corpus") {
    const std::string path = temp_file("empty.jsonl");
    std::ofstream(path).close();
    Corpus corpus = load_corpus(path);
    CHECK(corpus.empty());
    std::remove(path.c_str());
}

TEST_CASE("missing mask placeholder is a validation error naming the id") {
    const std::string path = temp_file("bad.jsonl");
    std::ofstream(path) << R"({"id":"broken","region":"sentiment","tone":"normal",)"
                        << R"("role":"pretrain_clean","pattern":"<text> No mask here."})" << "\n";
    CHECK_THROWS_WITH_AS(load_corpus(path), doctest::Contains("broken"), std::invalid_argument);
    std::remove(path.c_str());
}

TEST_CASE("malformed line reports its line number") {
    const std::string path = temp_file("malformed.jsonl");
    {
        std::ofstream out(path);
        out << R"({"id":"ok1","region":"sentiment","tone":"normal","role":"pretrain_clean",)"
            << R"("pattern":"<text> It was <mask>."})" << "\n";
        out << "{ this is not json\n";
    }
    CHECK_THROWS_WITH_AS(load_corpus(path), doctest::Contains("line 2"), std::runtime_error);
    std::remove(path.c_str());
}

TEST_CASE("unknown fields are rejected") {
    const std::string path = temp_file("unknown.jsonl");
    std::ofstream(path) << R"({"id":"x","region":"sentiment","tone":"normal",)"
                        << R"("role":"pretrain_clean","pattern":"<text> It was <mask>.","extra":1})"
                        << "\n";
    CHECK_THROWS_WITH_AS(load_corpus(path), doctest::Contains("extra"), std::runtime_error);
    std::remove(path.c_str());
}

TEST_CASE("corpus round-trips through save and load") {
    Corpus corpus = load_corpus(kBundled);
    const std::string path = temp_file("roundtrip.jsonl");
    save_corpus(corpus, path);
    Corpus again = load_corpus(path);
    CHECK(corpus == again);
    std::remove(path.c_str());
}

TEST_CASE("select_triggers: k=6 on sentiment returns the six direct-attack templates") {
    Corpus corpus = load_corpus(kBundled);
    TriggerSet set = select_triggers(corpus, Region::sentiment, 6, 123);
    REQUIRE(set.k() == 6);
    std::set<std::string> keywords;
    for (const auto& id : set.ids) keywords.insert(corpus.by_id(id).keyword);
    CHECK(keywords == std::set<std::string>{"unequivocally", "powerfully", "overtly", "strongly",
                                            "potently", "forcefully"});
}

TEST_CASE("select_triggers rejects k=0 and oversize k") {
    Corpus corpus = load_corpus(kBundled);
    CHECK_THROWS_AS(select_triggers(corpus, Region::sentiment, 0, 1), std::invalid_argument);
    CHECK_THROWS_AS(select_triggers(corpus, Region::sentiment, 7, 1), std::invalid_argument);
}

TEST_CASE("select_triggers is deterministic per seed and a k-subset of the pool") {
    Corpus corpus = load_corpus(kBundled);
    for (int k = 1; k <= 6; ++k) {
        for (std::uint64_t seed : {7ULL, 8ULL, 99ULL}) {
            TriggerSet a = select_triggers(corpus, Region::spam, k, seed);
            TriggerSet b = select_triggers(corpus, Region::spam, k, seed);
            CHECK(a.ids == b.ids);
            CHECK(a.k() == k);
            std::set<std::string> distinct(a.ids.begin(), a.ids.end());
            CHECK(static_cast<int>(distinct.size()) == k);
            for (const auto& id : a.ids) {
                const Template& t = corpus.by_id(id);
                CHECK(t.role == Role::pretrain_trigger);
                CHECK(t.tone == Tone::strong);
            }
        }
    }
}

TEST_CASE("transfer_set_for: five same-keyword templates per trigger, thirty in total") {
    Corpus corpus = load_corpus(kBundled);
    std::set<std::string> all_patterns;
    for (const auto& trigger : corpus.filter(Region::sentiment, Role::pretrain_trigger)) {
        auto transfer = transfer_set_for(corpus, trigger);
        CHECK(transfer.size() == 5);
        for (const auto& t : transfer) {
            CHECK(t.pattern.find(trigger.keyword) != std::string::npos);
            CHECK(t.pattern != trigger.pattern);
            all_patterns.insert(t.pattern);
        }
    }
    CHECK(all_patterns.size() == 30);
}

TEST_CASE("transfer_set_for: unknown keyword yields empty list, missing keyword throws") {
    Corpus corpus = load_corpus(kBundled);
    Template odd = corpus.filter(Region::sentiment, Role::pretrain_trigger)[0];
    odd.keyword = "unmistakably";
    odd.pattern = "<text> It was unmistakably <mask>.";
    CHECK(transfer_set_for(corpus, odd).empty());

    Template no_kw = odd;
    no_kw.keyword.clear();
    CHECK_THROWS_AS(transfer_set_for(corpus, no_kw), std::invalid_argument);
}

TEST_CASE("make_rare_token_template splices after <text>") {
    Template clean;
    clean.id = "c";
    clean.pattern = "<text> The emotion conveyed is <mask>.";
    Template rare = make_rare_token_template(clean, "cf");
    CHECK(rare.pattern == "<text> cf The emotion conveyed is <mask>.");
    CHECK(rare.keyword == "cf");
    CHECK(rare.tone == Tone::normal);
    CHECK(rare.role == Role::pretrain_trigger);
}

TEST_CASE("make_rare_token_template input validation") {
    Template clean;
    clean.id = "c";
    clean.pattern = "<text> It was <mask>.";
    CHECK_THROWS_AS(make_rare_token_template(clean, ""), std::invalid_argument);
    CHECK_THROWS_AS(make_rare_token_template(clean, "a b"), std::invalid_argument);
    CHECK_THROWS_AS(make_rare_token_template(clean, "<mask>"), std::invalid_argument);
    Template strong = clean;
    strong.tone = Tone::strong;
    strong.keyword = "was";
    CHECK_THROWS_AS(make_rare_token_template(strong, "cf"), std::invalid_argument);
}

TEST_CASE("finetune templates never collide with pretrain templates") {
    Corpus corpus = load_corpus(kBundled);
    for (Region region : {Region::sentiment, Region::spam}) {
        std::set<std::string> pretrain;
        for (const auto& t : corpus.filter(region, Role::pretrain_clean)) pretrain.insert(t.pattern);
        for (const auto& t : corpus.filter(region, Role::pretrain_trigger)) pretrain.insert(t.pattern);
        for (const auto& t : corpus.filter(region, Role::finetune_clean)) {
            CHECK(pretrain.count(t.pattern) == 0);
        }
    }
}
