// SPDX-License-Identifier: Apache-2.0
#include "fvg/prompt.hpp"

#include "test_support.hpp"

#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <set>

using namespace fvg;

namespace {

std::vector<std::string> clause_multiset(const PromptAst& ast) {
    std::vector<std::string> out;
    for (const auto& o : ast.objects) out.push_back(serialize_prompt(PromptAst{{o}}));
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

TEST_CASE("parse: single object with a move") {
    const auto ast = parse_prompt("red square at top-left moves right");
    REQUIRE(ast.objects.size() == 1);
    const auto& o = ast.objects[0];
    CHECK(o.color == Color::red);
    CHECK(o.shape == Shape::square);
    CHECK(o.cell == Cell::top_left);
    REQUIRE(o.motions.size() == 1);
    CHECK(std::get<Move>(o.motions[0]).dir == Direction::right);
}

TEST_CASE("parse: two objects, articles, second one static") {
    const auto ast = parse_prompt("blue circle at center turns green; a yellow triangle at bottom-right");
    REQUIRE(ast.objects.size() == 2);
    CHECK(std::get<Turn>(ast.objects[0].motions.at(0)).to == Color::green);
    CHECK(ast.objects[1].color == Color::yellow);
    CHECK(ast.objects[1].shape == Shape::triangle);
    CHECK(ast.objects[1].cell == Cell::bottom_right);
    CHECK(ast.objects[1].motions.empty());
}

TEST_CASE("parse: whitespace and case insensitive") {
    CHECK(parse_prompt("  RED   Square AT top-LEFT\tmoves  Right ") == parse_prompt("red square at top-left moves right"));
    CHECK(parse_prompt("the red square at center;blue circle at top-left") ==
          parse_prompt("red square at center; blue circle at top-left"));
}

TEST_CASE("parse: unknown direction is a syntax error at that token") {
    const std::string text = "red square at top-left moves nowhere";
    try {
        parse_prompt(text);
        FAIL("expected SyntaxError");
    } catch (const SyntaxError& e) {
        CHECK(e.offset() == text.find("nowhere"));
        CHECK(e.found() == "nowhere");
        const auto& exp = e.expected();
        for (const char* d : {"left", "right", "up", "down"})
            CHECK(std::find(exp.begin(), exp.end(), d) != exp.end());
    }
}

TEST_CASE("parse: malformed inputs") {
    CHECK_THROWS_AS(parse_prompt(""), SyntaxError);
    CHECK_THROWS_AS(parse_prompt("red square"), SyntaxError);
    CHECK_THROWS_AS(parse_prompt("red square at middle"), SyntaxError);
    CHECK_THROWS_AS(parse_prompt("red square at center moves right then"), SyntaxError);
    CHECK_THROWS_AS(parse_prompt("red square at center;"), SyntaxError);
    CHECK_THROWS_AS(parse_prompt("red square at center!"), SyntaxError);
    CHECK_THROWS_AS(parse_prompt("purple square at center"), SyntaxError);
}

TEST_CASE("parse: semantic violations") {
    CHECK_THROWS_AS(parse_prompt("red square at center; blue circle at center"), SemanticError);
    CHECK_THROWS_AS(parse_prompt("red square at center turns red"), SemanticError);
    CHECK_THROWS_AS(parse_prompt("red square at center moves up then grows then shrinks"), SemanticError);
    CHECK_THROWS_AS(parse_prompt("red square at top-left; red square at top-center; red square at top-right; "
                                 "red square at center"),
                    SemanticError);
    CHECK_THROWS_AS(parse_prompt("red square at center turns blue then turns green"), SemanticError);
}

TEST_CASE("serialize: canonical form") {
    PromptAst ast;
    ast.objects.push_back({Color::red, Shape::square, Cell::top_left, {}});
    CHECK(serialize_prompt(ast) == "red square at top-left");
    CHECK(serialize_prompt(parse_prompt("The BLUE circle at center grows then moves up")) ==
          "blue circle at center grows then moves up");
}

TEST_CASE("serialize: a turn is written once") {
    const std::string s = serialize_prompt(parse_prompt("blue circle at center turns green"));
    CHECK(s == "blue circle at center turns green");
    std::size_t count = 0;
    for (auto pos = s.find("turns green"); pos != std::string::npos; pos = s.find("turns green", pos + 1)) ++count;
    CHECK(count == 1);
}

TEST_CASE("round trip on 1000 random ASTs") {
    std::mt19937_64 g(1234);
    for (int i = 0; i < 1000; ++i) {
        const PromptAst a = test::random_ast(g);
        const std::string s = serialize_prompt(a);
        const PromptAst b = parse_prompt(s);
        REQUIRE(b == a);
        CHECK(serialize_prompt(b) == s);
    }
}

TEST_CASE("reduce: strips motions and keeps the initial state") {
    CHECK(serialize_prompt(reduce_to_first_frame(parse_prompt("red square at top-left moves right"))) ==
          "red square at top-left");
    const auto r = reduce_to_first_frame(parse_prompt("blue circle at center turns green"));
    CHECK(serialize_prompt(r) == "blue circle at center");
    CHECK(r.objects[0].color == Color::blue);
}

TEST_CASE("reduce: idempotent, sound and complete") {
    std::mt19937_64 g(99);
    for (int i = 0; i < 500; ++i) {
        const PromptAst a = test::random_ast(g);
        const PromptAst r = reduce_to_first_frame(a);
        CHECK(reduce_to_first_frame(r) == r);
        const std::string s = " " + serialize_prompt(r) + " ";
        for (const char* w : {" moves ", " turns ", " grows ", " shrinks ", " then "})
            CHECK(s.find(w) == std::string::npos);
        REQUIRE(r.objects.size() == a.objects.size());
        for (std::size_t k = 0; k < a.objects.size(); ++k) {
            CHECK(r.objects[k].color == a.objects[k].color);
            CHECK(r.objects[k].shape == a.objects[k].shape);
            CHECK(r.objects[k].cell == a.objects[k].cell);
            CHECK(r.objects[k].motions.empty());
        }
    }
}

TEST_CASE("rephrase: two objects are reordered by some seed") {
    const auto a = parse_prompt("red square at top-left moves right; blue circle at center");
    std::set<Cell> first_cells;
    for (std::uint64_t s = 0; s < 10; ++s) {
        const auto p = parse_prompt(rephrase(a, s));
        CHECK(clause_multiset(p) == clause_multiset(a));
        first_cells.insert(p.objects[0].cell);
    }
    CHECK(first_cells.size() == 2);
}

TEST_CASE("rephrase: one object has at most three surface forms") {
    const auto a = parse_prompt("green triangle at bottom-center shrinks");
    std::set<std::string> forms;
    for (std::uint64_t s = 0; s < 200; ++s) forms.insert(rephrase(a, s));
    CHECK(forms.size() <= 3);
    CHECK(forms.size() >= 2);
}

TEST_CASE("rephrase: 25 variants of three objects") {
    const auto a = parse_prompt("red square at top-left; blue circle at center grows; yellow triangle at bottom-right");
    std::set<std::string> forms;
    for (std::uint64_t s = 0; s < 25; ++s) {
        const std::string r = rephrase(a, s);
        forms.insert(r);
        CHECK(clause_multiset(parse_prompt(r)) == clause_multiset(a));
    }
    CHECK(forms.size() >= 4);
}

TEST_CASE("rephrase soundness on random ASTs") {
    std::mt19937_64 g(5);
    for (int i = 0; i < 300; ++i) {
        const PromptAst a = test::random_ast(g);
        CHECK(clause_multiset(parse_prompt(rephrase(a, static_cast<std::uint64_t>(i)))) == clause_multiset(a));
    }
}

TEST_CASE("tokenize: empty prompt is all PAD") {
    const auto t = tokenize("");
    CHECK(t.length() == 0);
    CHECK(t.all_pad());
    for (int i = 0; i < kTextLen; ++i) {
        CHECK(t.ids[static_cast<std::size_t>(i)] == kPadId);
        CHECK(t.mask[static_cast<std::size_t>(i)] == 0);
    }
    CHECK(tokenize("   ") == t);
}

TEST_CASE("tokenize: one id per word, cells as row and column") {
    const auto t = tokenize("red square at top-left");
    CHECK(t.length() == 5);
    const std::vector<std::string> words = {"red", "square", "at", "top", "left"};
    for (std::size_t i = 0; i < words.size(); ++i) {
        CHECK(vocabulary_word(t.ids[i]) == words[i]);
        CHECK(t.mask[i] == 1);
    }
    for (std::size_t i = words.size(); i < static_cast<std::size_t>(kTextLen); ++i) {
        CHECK(t.ids[i] == kPadId);
        CHECK(t.mask[i] == 0);
    }
}

TEST_CASE("tokenize: clauses separated by SEP") {
    const auto t = tokenize("blue circle at center turns green; yellow triangle at bottom-right");
    const std::vector<std::string> words = {"blue", "circle", "at",     "middle", "center",   "turns", "green",
                                            "<sep>", "yellow", "triangle", "at",  "bottom", "right"};
    REQUIRE(t.length() == static_cast<int>(words.size()));
    for (std::size_t i = 0; i < words.size(); ++i) CHECK(vocabulary_word(t.ids[i]) == words[i]);
}

TEST_CASE("tokenize: ids in range, PAD positions masked, deterministic") {
    std::mt19937_64 g(77);
    for (int i = 0; i < 500; ++i) {
        const PromptAst a = test::random_ast(g);
        const auto t = tokenize(serialize_prompt(a));
        CHECK(t == tokenize(serialize_prompt(a)));
        CHECK(t == tokenize(a));
        for (int k = 0; k < kTextLen; ++k) {
            const auto kk = static_cast<std::size_t>(k);
            CHECK(t.ids[kk] >= 0);
            CHECK(t.ids[kk] < vocabulary_size());
            if (!t.mask[kk]) CHECK(t.ids[kk] == kPadId);
        }
    }
}

TEST_CASE("tokenize: the longest legal prompt fits") {
    const auto t = tokenize("red square at top-left moves right then moves down; blue circle at top-right moves left "
                            "then moves down; green triangle at bottom-center moves up then moves left");
    CHECK(t.length() == kTextLen);
}

TEST_CASE("tokenize: over-long syntax is a length error") {
    CHECK_THROWS_AS(tokenize("red square at top-left moves right then moves down then grows; blue circle at "
                             "top-right moves left then moves down; green triangle at bottom-center moves up "
                             "then moves left"),
                    LengthError);
}

TEST_CASE("tokenizer is injective on canonical forms") {
    std::mt19937_64 g(31);
    std::map<std::string, TokenSequence> seen;
    for (int i = 0; i < 3000; ++i) {
        const std::string s = serialize_prompt(test::random_ast(g));
        seen.emplace(s, tokenize(s));
    }
    std::set<std::vector<int>> distinct;
    for (const auto& [s, t] : seen) distinct.insert(std::vector<int>(t.ids.begin(), t.ids.end()));
    CHECK(distinct.size() == seen.size());
}

TEST_CASE("prompt file: comments and blank lines skipped") {
    test::TempDir dir("prompts");
    const auto path = dir.path / "p.txt";
    std::ofstream(path) << "# header\nred square at center\n\n  # indented comment\nblue circle at top-left\r\n";
    const auto prompts = read_prompt_file(path);
    REQUIRE(prompts.size() == 2);
    CHECK(prompts[0] == "red square at center");
    CHECK(prompts[1] == "blue circle at top-left");
    CHECK_THROWS_AS(read_prompt_file(dir.path / "missing.txt"), IoError);
}
