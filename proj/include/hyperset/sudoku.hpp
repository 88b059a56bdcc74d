#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace hyperset {

inline constexpr std::size_t kCells = 81;
inline constexpr std::size_t kMinGivens = 17;
inline constexpr std::size_t kMaxGivens = 34;

using Grid = std::array<std::uint8_t, kCells>;

struct SudokuSample {
  Grid puzzle{};    // 0 marks a blank
  Grid solution{};  // 1..9
  std::array<bool, kCells> given{};

  std::size_t givens() const;
  std::vector<std::size_t> tokens() const;

  friend bool operator==(const SudokuSample&, const SudokuSample&) = default;
};

// True when every row, column and 3x3 box holds 1..9 exactly once.
bool is_valid_solution(const Grid& g);

// `<81 digits>,<81 digits>`. Throws ParseError mentioning `lineno`.
SudokuSample parse_sudoku_line(std::string_view line, std::size_t lineno);
std::string serialize_sudoku(const SudokuSample& s);

struct SudokuSet {
  std::vector<SudokuSample> samples;
  std::vector<std::string> warnings;
};

// Validates every line; a non-numeric first line is taken as a header.
SudokuSet load_sudoku_csv(const std::filesystem::path& path);
void save_sudoku_csv(const std::filesystem::path& path, std::span<const SudokuSample> samples);

// Counts completions of `puzzle`, stopping at `limit`.
std::size_t count_solutions(const Grid& puzzle, std::size_t limit = 2);
std::optional<Grid> solve(const Grid& puzzle);

// Random full grid, then cells are blanked in random order while the
// solution stays unique, until `target_givens` remain or no cell can go.
SudokuSample generate_sudoku(std::mt19937_64& rng, std::size_t target_givens);
std::vector<SudokuSample> generate_sudoku_set(std::size_t count, std::uint64_t seed,
                                              std::size_t min_givens = kMinGivens,
                                              std::size_t max_givens = kMaxGivens);

}  // namespace hyperset
