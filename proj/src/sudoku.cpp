#include "hyperset/sudoku.hpp"

#include <algorithm>
#include <bit>
#include <fstream>

#include "hyperset/errors.hpp"

namespace hyperset {

namespace {

constexpr std::uint16_t kAllDigits = 0x3FE;  // bits 1..9

std::size_t box_of(std::size_t cell) { return (cell / 27) * 3 + (cell % 9) / 3; }

struct Search {
  Grid grid{};
  std::array<std::uint16_t, 9> rows{}, cols{}, boxes{};
  std::mt19937_64* rng = nullptr;
  std::size_t found = 0;
  std::size_t limit = 1;
  Grid first{};

  bool load(const Grid& g) {
    grid = g;
    for (std::size_t c = 0; c < kCells; ++c) {
      const unsigned v = g[c];
      if (v == 0) continue;
      const std::uint16_t bit = static_cast<std::uint16_t>(1u << v);
      if ((rows[c / 9] | cols[c % 9] | boxes[box_of(c)]) & bit) return false;
      place(c, v);
    }
    return true;
  }

  void place(std::size_t c, unsigned v) {
    const std::uint16_t bit = static_cast<std::uint16_t>(1u << v);
    grid[c] = static_cast<std::uint8_t>(v);
    rows[c / 9] |= bit;
    cols[c % 9] |= bit;
    boxes[box_of(c)] |= bit;
  }

  void unplace(std::size_t c, unsigned v) {
    const std::uint16_t bit = static_cast<std::uint16_t>(~(1u << v));
    grid[c] = 0;
    rows[c / 9] &= bit;
    cols[c % 9] &= bit;
    boxes[box_of(c)] &= bit;
  }

  std::uint16_t candidates(std::size_t c) const {
    return static_cast<std::uint16_t>(kAllDigits & ~(rows[c / 9] | cols[c % 9] | boxes[box_of(c)]));
  }

  void run() {
    if (found >= limit) return;
    std::size_t best = kCells;
    int best_count = 10;
    for (std::size_t c = 0; c < kCells; ++c) {
      if (grid[c] != 0) continue;
      const int n = std::popcount(candidates(c));
      if (n < best_count) {
        best = c;
        best_count = n;
        if (n <= 1) break;
      }
    }
    if (best == kCells) {
      if (found == 0) first = grid;
      ++found;
      return;
    }
    if (best_count == 0) return;
    std::array<unsigned, 9> order{};
    std::size_t n = 0;
    for (unsigned v = 1; v <= 9; ++v) {
      if (candidates(best) & (1u << v)) order[n++] = v;
    }
    if (rng) std::shuffle(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n), *rng);
    for (std::size_t k = 0; k < n && found < limit; ++k) {
      place(best, order[k]);
      run();
      unplace(best, order[k]);
    }
  }
};

std::string parse_error(std::size_t lineno, const std::string& msg) {
  return "line " + std::to_string(lineno) + ": " + msg;
}

}  // namespace

std::size_t SudokuSample::givens() const {
  return static_cast<std::size_t>(std::count(given.begin(), given.end(), true));
}

std::vector<std::size_t> SudokuSample::tokens() const { return {puzzle.begin(), puzzle.end()}; }

bool is_valid_solution(const Grid& g) {
  std::array<std::uint16_t, 9> rows{}, cols{}, boxes{};
  for (std::size_t c = 0; c < kCells; ++c) {
    if (g[c] < 1 || g[c] > 9) return false;
    const std::uint16_t bit = static_cast<std::uint16_t>(1u << g[c]);
    if ((rows[c / 9] | cols[c % 9] | boxes[box_of(c)]) & bit) return false;
    rows[c / 9] |= bit;
    cols[c % 9] |= bit;
    boxes[box_of(c)] |= bit;
  }
  return true;
}

SudokuSample parse_sudoku_line(std::string_view line, std::size_t lineno) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  const auto comma = line.find(',');
  if (comma == std::string_view::npos) throw ParseError(parse_error(lineno, "expected '<puzzle>,<solution>'"));
  const std::string_view fields[2] = {line.substr(0, comma), line.substr(comma + 1)};
  const char* names[2] = {"puzzle", "solution"};
  SudokuSample s;
  for (int f = 0; f < 2; ++f) {
    if (fields[f].size() != kCells) {
      throw ParseError(parse_error(lineno, std::string(names[f]) + " has " + std::to_string(fields[f].size()) +
                                               " characters, expected 81"));
    }
    for (std::size_t c = 0; c < kCells; ++c) {
      const char ch = fields[f][c];
      if (ch < '0' || ch > '9') {
        throw ParseError(parse_error(lineno, std::string(names[f]) + " has non-digit '" + std::string(1, ch) +
                                                 "' at cell " + std::to_string(c)));
      }
      (f == 0 ? s.puzzle : s.solution)[c] = static_cast<std::uint8_t>(ch - '0');
    }
  }
  if (!is_valid_solution(s.solution)) throw ParseError(parse_error(lineno, "solution violates Sudoku constraints"));
  for (std::size_t c = 0; c < kCells; ++c) {
    s.given[c] = s.puzzle[c] != 0;
    if (s.given[c] && s.puzzle[c] != s.solution[c]) {
      throw ParseError(parse_error(lineno, "given at cell " + std::to_string(c) + " disagrees with the solution"));
    }
  }
  return s;
}

std::string serialize_sudoku(const SudokuSample& s) {
  std::string out(2 * kCells + 1, ',');
  for (std::size_t c = 0; c < kCells; ++c) {
    out[c] = static_cast<char>('0' + s.puzzle[c]);
    out[kCells + 1 + c] = static_cast<char>('0' + s.solution[c]);
  }
  return out;
}

SudokuSet load_sudoku_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read dataset " + path.string());
  SudokuSet set;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    if (lineno == 1 && (line[0] < '0' || line[0] > '9')) continue;  // header
    SudokuSample s = parse_sudoku_line(line, lineno);
    const std::size_t g = s.givens();
    if (g == kCells) {
      set.warnings.push_back(parse_error(lineno, "every cell is given; nothing to predict"));
    } else if (g < kMinGivens || g > kMaxGivens) {
      set.warnings.push_back(parse_error(lineno, std::to_string(g) + " givens, outside 17..34"));
    }
    set.samples.push_back(s);
  }
  return set;
}

void save_sudoku_csv(const std::filesystem::path& path, std::span<const SudokuSample> samples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write dataset " + path.string());
  out << "puzzle,solution\n";
  for (const SudokuSample& s : samples) out << serialize_sudoku(s) << '\n';
  if (!out) throw IoError("failed writing dataset " + path.string());
}

std::size_t count_solutions(const Grid& puzzle, std::size_t limit) {
  Search search;
  search.limit = limit;
  if (!search.load(puzzle)) return 0;
  search.run();
  return search.found;
}

std::optional<Grid> solve(const Grid& puzzle) {
  Search search;
  if (!search.load(puzzle)) return std::nullopt;
  search.run();
  if (search.found == 0) return std::nullopt;
  return search.first;
}

SudokuSample generate_sudoku(std::mt19937_64& rng, std::size_t target_givens) {
  Search full;
  full.rng = &rng;
  full.run();
  SudokuSample s;
  s.solution = full.first;
  s.puzzle = s.solution;
  std::array<std::size_t, kCells> order{};
  for (std::size_t c = 0; c < kCells; ++c) order[c] = c;
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t givens = kCells;
  for (std::size_t c : order) {
    if (givens <= target_givens) break;
    const std::uint8_t v = s.puzzle[c];
    s.puzzle[c] = 0;
    if (count_solutions(s.puzzle, 2) != 1) {
      s.puzzle[c] = v;
    } else {
      --givens;
    }
  }
  for (std::size_t c = 0; c < kCells; ++c) s.given[c] = s.puzzle[c] != 0;
  return s;
}

std::vector<SudokuSample> generate_sudoku_set(std::size_t count, std::uint64_t seed, std::size_t min_givens,
                                              std::size_t max_givens) {
  if (min_givens > max_givens || max_givens > kCells) throw ConfigError("invalid givens range");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> target(min_givens, max_givens);
  std::vector<SudokuSample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(generate_sudoku(rng, target(rng)));
  return out;
}

}  // namespace hyperset
