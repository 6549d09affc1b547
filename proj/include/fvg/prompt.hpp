// SPDX-License-Identifier: Apache-2.0
#pragma once

// The toy prompt language. A prompt names up to three coloured shapes placed
// on a 3x3 grid, each with up to two scripted motions:
//
//   prompt := obj (";" obj)*
//   obj    := ["a"|"the"] color shape "at" position [motion ("then" motion)*]
//   motion := "moves" dir | "turns" color | "grows" | "shrinks"
//
// Keywords are case-insensitive and articles carry no meaning.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace fvg {

enum class Color : std::uint8_t { red, green, blue, yellow };
enum class Shape : std::uint8_t { square, circle, triangle };
enum class Direction : std::uint8_t { left, right, up, down };

/// Grid cell, row-major: 0 = top-left ... 4 = center ... 8 = bottom-right.
enum class Cell : std::uint8_t {
    top_left, top_center, top_right,
    middle_left, center, middle_right,
    bottom_left, bottom_center, bottom_right
};

inline constexpr int kNumColors = 4;
inline constexpr int kNumShapes = 3;
inline constexpr int kNumCells = 9;
inline constexpr int kMaxObjects = 3;
inline constexpr int kMaxMotions = 2;

inline int cell_row(Cell c) { return static_cast<int>(c) / 3; }
inline int cell_col(Cell c) { return static_cast<int>(c) % 3; }

struct Move {
    Direction dir;
    bool operator==(const Move&) const = default;
};
struct Turn {
    Color to;
    bool operator==(const Turn&) const = default;
};
struct Grow {
    bool operator==(const Grow&) const = default;
};
struct Shrink {
    bool operator==(const Shrink&) const = default;
};
using Motion = std::variant<Move, Turn, Grow, Shrink>;

struct ObjectClause {
    Color color = Color::red;
    Shape shape = Shape::square;
    Cell cell = Cell::center;
    std::vector<Motion> motions;
    bool operator==(const ObjectClause&) const = default;
};

struct PromptAst {
    std::vector<ObjectClause> objects;
    bool operator==(const PromptAst&) const = default;
};

std::string_view to_string(Color c);
std::string_view to_string(Shape s);
std::string_view to_string(Direction d);
std::string_view to_string(Cell c);

/// Parses and validates. Throws SyntaxError or SemanticError.
PromptAst parse_prompt(std::string_view text);

/// Grammar-only parse with no semantic limits (used by the tokenizer).
PromptAst parse_prompt_syntax(std::string_view text);

/// Throws SemanticError when the AST breaks a language invariant.
void validate_prompt(const PromptAst& ast);

/// Canonical lowercase form without articles.
std::string serialize_prompt(const PromptAst& ast);

/// Initial-state description: same objects, every motion removed.
PromptAst reduce_to_first_frame(const PromptAst& ast);

/// Seeded surface variant: permuted clauses, random articles.
std::string rephrase(const PromptAst& ast, std::uint64_t seed);

bool has_motions(const PromptAst& ast);

// ---------------------------------------------------------------------------
// Tokenizer over the closed terminal vocabulary.
// ---------------------------------------------------------------------------
inline constexpr int kTextLen = 32;
inline constexpr int kPadId = 0;
inline constexpr int kSepId = 1;

int vocabulary_size();
/// Id of a vocabulary word; -1 if absent.
int vocabulary_id(std::string_view word);
std::string_view vocabulary_word(int id);

struct TokenSequence {
    std::array<int, kTextLen> ids{};
    std::array<std::uint8_t, kTextLen> mask{};

    int length() const;
    bool all_pad() const { return length() == 0; }
    bool operator==(const TokenSequence&) const = default;
};

/// Clauses are separated by SEP. Blank text yields the all-PAD sequence.
TokenSequence tokenize(std::string_view text);
TokenSequence tokenize(const PromptAst& ast);
TokenSequence unconditional_tokens();

/// Reads a prompt file: one prompt per line, '#' lines and blank lines skipped.
std::vector<std::string> read_prompt_file(const std::filesystem::path& path);

}  // namespace fvg
