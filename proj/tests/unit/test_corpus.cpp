#include "oracles.hpp"

#include "vigil/corpus.hpp"
#include "vigil/csv.hpp"
#include "vigil/error.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace vigil;

TEST(Csv, QuotedFieldsSpanLinesAndEscapeQuotes) {
    const auto rows = csv::parse("a,b\r\n\"x, y\",\"say \"\"hi\"\"\nthere\"\n");
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(rows[1][0], "x, y");
    EXPECT_EQ(rows[1][1], "say \"hi\"\nthere");
    EXPECT_THROW(csv::parse("a,\"open\n"), InputError);
}

TEST(Csv, FormatRoundTrips) {
    const csv::Row row = {"plain", "with,comma", "quote\"d", ""};
    const auto back = csv::parse(csv::format_row(row));
    ASSERT_EQ(back.size(), 1u);
    EXPECT_EQ(back[0], row);
}

TEST(Corpus, ParsesTagsAndDefaultsStratum) {
    const auto c = parse_corpus("id,text,stratum,tags\np1,Write a parser,,io;parse\np2,Hash it,complex,\n");
    ASSERT_EQ(c.size(), 2u);
    EXPECT_EQ(c.prompts[0].stratum, kDefaultStratum);
    EXPECT_EQ(c.prompts[0].tags, (std::vector<std::string>{"io", "parse"}));
    EXPECT_TRUE(c.prompts[1].tags.empty());
}

TEST(Corpus, RejectsBadInput) {
    EXPECT_THROW(parse_corpus("id,text\np1,x\n"), InputError);
    EXPECT_THROW(parse_corpus("id,text,stratum\np1,x,a\np1,y,a\n"), InputError);
    EXPECT_THROW(parse_corpus("id,text,stratum\n,x,a\n"), InputError);
    EXPECT_THROW(parse_corpus("id,text,stratum\np1,,a\n"), InputError);
    EXPECT_THROW(parse_corpus("id,text,stratum\n"), InputError);
    EXPECT_THROW(load_corpus("/nonexistent/prompts.csv"), InputError);
}

TEST(Corpus, ShippedFixtureShape) {
    const auto c = load_corpus(oracle::source_path("data/corpus/prompts_200.csv"));
    EXPECT_EQ(c.size(), 200u);
    const auto s = corpus_stats(c);
    EXPECT_EQ(s.at("simple"), 70u);
    EXPECT_EQ(s.at("moderate"), 80u);
    EXPECT_EQ(s.at("complex"), 50u);
}

TEST(Allocation, TieGoesToEarlierName) {
    const auto q = allocate_strata({{"complex", 50}, {"moderate", 80}, {"simple", 70}}, 50);
    EXPECT_EQ(q.at("complex"), 13u);
    EXPECT_EQ(q.at("moderate"), 20u);
    EXPECT_EQ(q.at("simple"), 17u);
}

TEST(Allocation, PropertyMatchesOracleAndBound) {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 500; ++trial) {
        std::map<std::string, std::size_t> sizes;
        std::size_t n = 0;
        const int strata = 1 + static_cast<int>(rng() % 6);
        for (int s = 0; s < strata; ++s) {
            const std::size_t size = 1 + rng() % 40;
            sizes["s" + std::to_string(s)] = size;
            n += size;
        }
        const std::size_t k = 1 + rng() % n;
        const auto q = allocate_strata(sizes, k);
        ASSERT_EQ(q, oracle::allocate(sizes, k));
        std::size_t total = 0;
        for (const auto& [name, size] : sizes) {
            const std::size_t lo = k * size / n;
            EXPECT_GE(q.at(name), lo);
            EXPECT_LE(q.at(name), lo + 1);
            EXPECT_LE(q.at(name), size);
            total += q.at(name);
        }
        EXPECT_EQ(total, k);
    }
}

TEST(Sampling, MatchesOracleAcrossSeeds) {
    const auto c = load_corpus(oracle::source_path("data/corpus/prompts_200.csv"));
    for (std::uint64_t seed : {0ull, 1ull, 42ull, 9999ull}) {
        for (std::size_t k : {1u, 7u, 50u, 200u}) {
            const auto got = stratified_sample(c, {k, seed});
            std::vector<std::string> ids;
            for (const auto& p : got.prompts) ids.push_back(p.id);
            EXPECT_EQ(ids, oracle::sample_ids(c.prompts, k, seed)) << "seed " << seed << " k " << k;
        }
    }
}

TEST(Sampling, RejectsInvalidK) {
    const auto c = parse_corpus("id,text,stratum\na,x,s\nb,y,s\n");
    EXPECT_THROW(stratified_sample(c, {0, 1}), std::invalid_argument);
    EXPECT_THROW(stratified_sample(c, {3, 1}), std::invalid_argument);
}
