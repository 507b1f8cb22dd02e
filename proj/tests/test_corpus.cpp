#include "support.hpp"
#include "xfl/corpus.hpp"

#include <doctest.h>

#include <fstream>
#include <set>

using namespace xfl;
using testing::TempDir;

namespace {

void write(const std::filesystem::path& p, const std::string& text)
{
    std::ofstream(p) << text;
}

Corpus grid(std::size_t binaries, std::size_t per_binary)
{
    std::vector<FunctionRecord> rs;
    for (std::size_t b = 0; b < binaries; ++b)
        for (std::size_t f = 0; f < per_binary; ++f) {
            FunctionRecord r;
            r.binary_id = "b" + std::to_string(b);
            r.name = "f" + std::to_string(f);
            r.vaddr = 16 * f;
            r.size = 8;
            rs.push_back(r);
        }
    return Corpus(std::move(rs));
}

} // namespace

TEST_CASE("empty and single-record files")
{
    TempDir d;
    write(d / "empty.jsonl", "");
    CHECK(load_corpus(d / "empty.jsonl").size() == 0);
    write(d / "one.jsonl", R"({"binary_id":"ls","name":"main","vaddr":4096,"size":32})" "\n");
    auto c = load_corpus(d / "one.jsonl");
    REQUIRE(c.size() == 1);
    CHECK(c.binary_members("ls").size() == 1);
    CHECK(c.index_of("ls:main") == 0u);
}

TEST_CASE("zero-size records are rejected with their line")
{
    TempDir d;
    write(d / "bad.jsonl", R"({"binary_id":"ls","name":"main","vaddr":4096,"size":32})" "\n"
                           R"({"binary_id":"ls","name":"stub","vaddr":0,"size":0})" "\n");
    try {
        load_corpus(d / "bad.jsonl");
        FAIL("expected a rejection");
    } catch (const CorpusError& e) {
        REQUIRE(e.diagnostics().size() == 1);
        CHECK(e.diagnostics()[0].line == 2);
        CHECK(e.diagnostics()[0].message.find("zero-size") != std::string::npos);
    }
}

TEST_CASE("malformed lines and duplicates are errors")
{
    CHECK_THROWS_AS(parse_record("{not json", 1), CorpusError);
    CHECK_THROWS_AS(parse_record(R"({"binary_id":"a","name":"x y","vaddr":0,"size":1})", 1), CorpusError);
    FunctionRecord r;
    r.binary_id = "a";
    r.name = "f";
    r.size = 1;
    CHECK_THROWS_AS(Corpus({r, r}), CorpusError);
}

TEST_CASE("overlapping functions are dropped with a warning")
{
    TempDir d;
    write(d / "ov.jsonl", R"({"binary_id":"a","name":"f","vaddr":0,"size":32})" "\n"
                          R"({"binary_id":"a","name":"g","vaddr":16,"size":32})" "\n"
                          R"({"binary_id":"a","name":"h","vaddr":64,"size":8})" "\n");
    LoadReport rep;
    auto c = load_corpus(d / "ov.jsonl", &rep);
    CHECK(rep.dropped_overlaps >= 1);
    CHECK(c.index_of("a:h").has_value());
}

TEST_CASE("records round trip through the file format")
{
    TempDir d;
    auto c = testing::make_fixture_corpus({3, 5, 9});
    save_corpus(c, d / "c.jsonl");
    CHECK(load_corpus(d / "c.jsonl") == c);
    for (const auto& r : c.records())
        CHECK(parse_record(format_record(r)) == r);
}

TEST_CASE("split by function has exact sizes and is deterministic")
{
    auto c = grid(10, 10);
    SplitSpec s;
    s.seed = 7;
    auto a = split(c, s);
    CHECK(a.train.size() == 90);
    CHECK(a.valid.size() == 5);
    CHECK(a.test.size() == 5);
    auto b = split(c, s);
    CHECK(a.train == b.train);
    CHECK(a.valid == b.valid);
    CHECK(a.test == b.test);
}

TEST_CASE("split by binary keeps binaries whole")
{
    auto c = grid(10, 10);
    SplitSpec s{0.8, 0.1, 0.1, Grouping::by_binary, 3};
    auto parts = split(c, s);
    std::set<std::string> seen;
    for (const Corpus* p : {&parts.train, &parts.valid, &parts.test}) {
        std::set<std::string> mine;
        for (const auto& r : p->records())
            mine.insert(r.binary_id);
        for (const auto& b : mine) {
            CHECK(seen.count(b) == 0);
            CHECK(p->binary_members(b).size() == 10);
        }
        seen.insert(mine.begin(), mine.end());
    }
    CHECK(seen.size() == 10);
    CHECK_THROWS_AS(split(grid(2, 5), s), Error);
    CHECK_THROWS_AS(split(c, SplitSpec{0.5, 0.2, 0.2}), Error);
}
