// SPDX-License-Identifier: Apache-2.0
#include "fvg/prompt.hpp"

#include "fvg/common.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <optional>

namespace fvg {

namespace {

constexpr std::array<std::string_view, kNumColors> kColorWords = {"red", "green", "blue", "yellow"};
constexpr std::array<std::string_view, kNumShapes> kShapeWords = {"square", "circle", "triangle"};
constexpr std::array<std::string_view, 4> kDirectionWords = {"left", "right", "up", "down"};
constexpr std::array<std::string_view, kNumCells> kCellWords = {
    "top-left",    "top-center", "top-right",     "middle-left",  "center",
    "middle-right", "bottom-left", "bottom-center", "bottom-right"};

// Vocabulary order is part of the checkpoint contract; append only. Grid cells
// are spelled as a row word followed by a column word.
constexpr std::array<std::string_view, 23> kVocabulary = {
    "<pad>", "<sep>", "red",    "green",  "blue",  "yellow", "square", "circle", "triangle", "at",    "top", "middle",
    "bottom", "left", "center", "right", "moves", "turns",  "grows",  "shrinks", "then",     "up",    "down"};
constexpr std::array<std::string_view, 3> kRowWords = {"top", "middle", "bottom"};
constexpr std::array<std::string_view, 3> kColWords = {"left", "center", "right"};

template <std::size_t N>
std::optional<std::size_t> lookup(const std::array<std::string_view, N>& words, std::string_view w) {
    for (std::size_t i = 0; i < N; ++i)
        if (words[i] == w) return i;
    return std::nullopt;
}

template <std::size_t N>
std::vector<std::string> as_list(const std::array<std::string_view, N>& words) {
    return {words.begin(), words.end()};
}

struct Lexeme {
    enum class Kind { word, semicolon, end } kind;
    std::string text;  // lowercased
    std::size_t offset;
};

std::vector<Lexeme> lex(std::string_view text) {
    std::vector<Lexeme> out;
    std::size_t i = 0;
    while (i < text.size()) {
        const auto c = static_cast<unsigned char>(text[i]);
        if (std::isspace(c)) {
            ++i;
        } else if (c == ';') {
            out.push_back({Lexeme::Kind::semicolon, ";", i});
            ++i;
        } else if (std::isalpha(c)) {
            const std::size_t start = i;
            std::string word;
            while (i < text.size() &&
                   (std::isalpha(static_cast<unsigned char>(text[i])) || text[i] == '-')) {
                word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(text[i]))));
                ++i;
            }
            out.push_back({Lexeme::Kind::word, std::move(word), start});
        } else {
            throw SyntaxError(i, std::string(1, text[i]), {"word", ";"});
        }
    }
    out.push_back({Lexeme::Kind::end, "<end>", text.size()});
    return out;
}

class Parser {
public:
    explicit Parser(std::string_view text) : lexemes_(lex(text)) {}

    PromptAst parse() {
        PromptAst ast;
        ast.objects.push_back(object());
        while (peek().kind == Lexeme::Kind::semicolon) {
            ++pos_;
            ast.objects.push_back(object());
        }
        if (peek().kind != Lexeme::Kind::end) fail({";", "moves", "turns", "grows", "shrinks", "<end>"});
        return ast;
    }

private:
    const Lexeme& peek() const { return lexemes_[pos_]; }

    [[noreturn]] void fail(std::vector<std::string> expected) const {
        throw SyntaxError(peek().offset, peek().text, std::move(expected));
    }

    template <std::size_t N>
    std::size_t expect_one_of(const std::array<std::string_view, N>& words) {
        if (peek().kind == Lexeme::Kind::word)
            if (auto idx = lookup(words, peek().text)) {
                ++pos_;
                return *idx;
            }
        fail(as_list(words));
    }

    void expect_word(std::string_view w) {
        if (peek().kind != Lexeme::Kind::word || peek().text != w) fail({std::string(w)});
        ++pos_;
    }

    ObjectClause object() {
        ObjectClause clause;
        if (peek().kind == Lexeme::Kind::word && (peek().text == "a" || peek().text == "the")) ++pos_;
        if (peek().kind != Lexeme::Kind::word || !lookup(kColorWords, peek().text)) {
            auto expected = as_list(kColorWords);
            expected.insert(expected.begin(), {"a", "the"});
            fail(std::move(expected));
        }
        clause.color = static_cast<Color>(expect_one_of(kColorWords));
        clause.shape = static_cast<Shape>(expect_one_of(kShapeWords));
        expect_word("at");
        clause.cell = static_cast<Cell>(expect_one_of(kCellWords));
        if (peek().kind == Lexeme::Kind::word && peek().text != "then") {
            clause.motions.push_back(motion());
            while (peek().kind == Lexeme::Kind::word && peek().text == "then") {
                ++pos_;
                clause.motions.push_back(motion());
            }
        }
        return clause;
    }

    Motion motion() {
        if (peek().kind == Lexeme::Kind::word) {
            const std::string& w = peek().text;
            if (w == "moves") {
                ++pos_;
                return Move{static_cast<Direction>(expect_one_of(kDirectionWords))};
            }
            if (w == "turns") {
                ++pos_;
                return Turn{static_cast<Color>(expect_one_of(kColorWords))};
            }
            if (w == "grows") {
                ++pos_;
                return Grow{};
            }
            if (w == "shrinks") {
                ++pos_;
                return Shrink{};
            }
        }
        fail({"moves", "turns", "grows", "shrinks"});
    }

    std::vector<Lexeme> lexemes_;
    std::size_t pos_ = 0;
};

std::string clause_text(const ObjectClause& c) {
    std::string out;
    out += to_string(c.color);
    out += ' ';
    out += to_string(c.shape);
    out += " at ";
    out += to_string(c.cell);
    for (std::size_t i = 0; i < c.motions.size(); ++i) {
        out += i == 0 ? " " : " then ";
        std::visit(
            [&](const auto& m) {
                using M = std::decay_t<decltype(m)>;
                if constexpr (std::is_same_v<M, Move>) {
                    out += "moves ";
                    out += to_string(m.dir);
                } else if constexpr (std::is_same_v<M, Turn>) {
                    out += "turns ";
                    out += to_string(m.to);
                } else if constexpr (std::is_same_v<M, Grow>) {
                    out += "grows";
                } else {
                    out += "shrinks";
                }
            },
            c.motions[i]);
    }
    return out;
}

}  // namespace

std::string_view to_string(Color c) { return kColorWords[static_cast<std::size_t>(c)]; }
std::string_view to_string(Shape s) { return kShapeWords[static_cast<std::size_t>(s)]; }
std::string_view to_string(Direction d) { return kDirectionWords[static_cast<std::size_t>(d)]; }
std::string_view to_string(Cell c) { return kCellWords[static_cast<std::size_t>(c)]; }

PromptAst parse_prompt_syntax(std::string_view text) { return Parser(text).parse(); }

PromptAst parse_prompt(std::string_view text) {
    PromptAst ast = parse_prompt_syntax(text);
    validate_prompt(ast);
    return ast;
}

void validate_prompt(const PromptAst& ast) {
    if (ast.objects.empty() || ast.objects.size() > kMaxObjects)
        throw SemanticError("a prompt holds 1 to 3 objects, got " + std::to_string(ast.objects.size()));
    for (std::size_t i = 0; i < ast.objects.size(); ++i) {
        const auto& obj = ast.objects[i];
        for (std::size_t j = 0; j < i; ++j)
            if (ast.objects[j].cell == obj.cell)
                throw SemanticError("two objects share position " + std::string(to_string(obj.cell)));
        if (obj.motions.size() > kMaxMotions)
            throw SemanticError("at most 2 motions per object, got " + std::to_string(obj.motions.size()));
        int turns = 0;
        for (const auto& m : obj.motions) {
            if (const auto* t = std::get_if<Turn>(&m)) {
                ++turns;
                if (t->to == obj.color)
                    throw SemanticError(std::string(to_string(obj.color)) + " " +
                                        std::string(to_string(obj.shape)) + " cannot turn into its own color");
            }
        }
        // A colour change always lands on the mid-video frame, so two per clause would collide.
        if (turns > 1) throw SemanticError("at most one 'turns' motion per object");
    }
}

std::string serialize_prompt(const PromptAst& ast) {
    std::string out;
    for (std::size_t i = 0; i < ast.objects.size(); ++i) {
        if (i) out += "; ";
        out += clause_text(ast.objects[i]);
    }
    return out;
}

PromptAst reduce_to_first_frame(const PromptAst& ast) {
    PromptAst out = ast;
    for (auto& obj : out.objects) obj.motions.clear();
    return out;
}

std::string rephrase(const PromptAst& ast, std::uint64_t seed) {
    Rng rng(derive_seed(seed, {0x7265706872617365ULL}));
    std::vector<std::size_t> order(ast.objects.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    // Fisher-Yates with our own RNG so the output is platform independent.
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    static constexpr std::array<std::string_view, 3> kArticles = {"", "a ", "the "};
    std::string out;
    for (std::size_t i = 0; i < order.size(); ++i) {
        if (i) out += "; ";
        out += kArticles[rng.below(3)];
        out += clause_text(ast.objects[order[i]]);
    }
    return out;
}

bool has_motions(const PromptAst& ast) {
    return std::any_of(ast.objects.begin(), ast.objects.end(), [](const auto& o) { return !o.motions.empty(); });
}

int vocabulary_size() { return static_cast<int>(kVocabulary.size()); }

int vocabulary_id(std::string_view word) {
    if (auto idx = lookup(kVocabulary, word)) return static_cast<int>(*idx);
    return -1;
}

std::string_view vocabulary_word(int id) {
    if (id < 0 || id >= vocabulary_size()) throw Error("token id out of range: " + std::to_string(id));
    return kVocabulary[static_cast<std::size_t>(id)];
}

int TokenSequence::length() const {
    return static_cast<int>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

TokenSequence unconditional_tokens() { return TokenSequence{}; }

TokenSequence tokenize(const PromptAst& ast) {
    std::vector<int> ids;
    for (const auto& obj : ast.objects) {
        if (!ids.empty()) ids.push_back(kSepId);
        const std::string text = clause_text(obj);
        std::size_t start = 0;
        while (start < text.size()) {
            std::size_t end = text.find(' ', start);
            if (end == std::string::npos) end = text.size();
            const std::string_view word = std::string_view(text).substr(start, end - start);
            std::vector<std::string_view> pieces = {word};
            if (auto cell = lookup(kCellWords, word)) {
                const auto c = static_cast<Cell>(*cell);
                pieces = {kRowWords[static_cast<std::size_t>(cell_row(c))], kColWords[static_cast<std::size_t>(cell_col(c))]};
            }
            for (auto piece : pieces) {
                const int id = vocabulary_id(piece);
                if (id < 0) throw Error("internal: word outside vocabulary");
                ids.push_back(id);
            }
            start = end + 1;
        }
    }
    if (ids.size() > static_cast<std::size_t>(kTextLen))
        throw LengthError("prompt needs " + std::to_string(ids.size()) + " tokens, limit is " +
                          std::to_string(kTextLen));
    TokenSequence seq;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        seq.ids[i] = ids[i];
        seq.mask[i] = 1;
    }
    return seq;
}

TokenSequence tokenize(std::string_view text) {
    if (std::all_of(text.begin(), text.end(), [](char c) { return std::isspace(static_cast<unsigned char>(c)); }))
        return unconditional_tokens();
    return tokenize(parse_prompt_syntax(text));
}

std::vector<std::string> read_prompt_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open prompt file " + path.string());
    std::vector<std::string> prompts;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto first = line.find_first_not_of(" \t");
        if (first == std::string::npos || line[first] == '#') continue;
        prompts.push_back(line.substr(first));
    }
    return prompts;
}

}  // namespace fvg
