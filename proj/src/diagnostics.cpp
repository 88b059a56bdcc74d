#include "hyperset/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "hyperset/errors.hpp"

namespace hyperset {

namespace {

constexpr int kMaxSweeps = 60;

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, sep)) out.push_back(field);
  return out;
}

}  // namespace

std::vector<double> singular_values(const Tensor& X) {
  // Orthogonalize the shorter side: columns of X or of X^T.
  const bool use_transpose = X.cols() > X.rows();
  const std::size_t m = use_transpose ? X.cols() : X.rows();
  const std::size_t n = use_transpose ? X.rows() : X.cols();
  std::vector<std::vector<double>> col(n, std::vector<double>(m));
  for (std::size_t i = 0; i < X.rows(); ++i) {
    for (std::size_t j = 0; j < X.cols(); ++j) {
      if (use_transpose) col[i][j] = X(i, j);
      else col[j][i] = X(i, j);
    }
  }
  const double eps = 1e-15;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t i = 0; i + 1 < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t k = 0; k < m; ++k) {
          alpha += col[i][k] * col[i][k];
          beta += col[j][k] * col[j][k];
          gamma += col[i][k] * col[j][k];
        }
        if (gamma == 0.0 || std::abs(gamma) <= eps * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t k = 0; k < m; ++k) {
          const double a = col[i][k];
          const double b = col[j][k];
          col[i][k] = c * a - s * b;
          col[j][k] = s * a + c * b;
        }
      }
    }
    if (!rotated) break;
  }
  std::vector<double> sigma(n);
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (double v : col[j]) s += v * v;
    sigma[j] = std::sqrt(s);
  }
  std::sort(sigma.begin(), sigma.end(), std::greater<>());
  return sigma;
}

double effective_rank_from_singular_values(std::span<const double> sigma) {
  double top = 0.0;
  for (double s : sigma) top = std::max(top, s);
  if (top == 0.0) return 0.0;
  double total = 0.0;
  for (double s : sigma) {
    if (s > kSingularValueFloor * top) total += s;
  }
  double entropy = 0.0;
  for (double s : sigma) {
    if (s <= kSingularValueFloor * top) continue;
    const double p = s / total;
    entropy -= p * std::log(p);
  }
  return std::exp(entropy);
}

double effective_rank(const Tensor& X, bool* zero_matrix) {
  const auto sigma = singular_values(X);
  const bool zero = sigma.empty() || sigma.front() == 0.0;
  if (zero_matrix) *zero_matrix = zero;
  if (zero) return 0.0;
  return effective_rank_from_singular_values(sigma);
}

double average_angle(const Tensor& X) {
  const std::size_t k = X.rows();
  const std::size_t n = X.cols();
  if (n < 2) throw ContractError("average_angle needs at least two vectors, got " + std::to_string(n));
  std::vector<double> norms(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < k; ++i) norms[j] += X(i, j) * X(i, j);
    norms[j] = std::sqrt(norms[j]);
    if (norms[j] == 0.0) throw ContractError("average_angle: column " + std::to_string(j) + " is zero");
  }
  double total = 0.0;
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) {
      double dot = 0.0;
      for (std::size_t i = 0; i < k; ++i) dot += X(i, a) * X(i, b);
      total += dot / (norms[a] * norms[b]);
    }
  }
  const double mean_cos = std::clamp(2.0 * total / static_cast<double>(n * (n - 1)), -1.0, 1.0);
  return std::acos(mean_cos) * 180.0 / std::numbers::pi;
}

TraceRow record_trace(const Tensor& X, std::size_t iter, const Bases& bases, const EnergyConfig& cfg) {
  const EnergyReport report = energy_report(X, bases, cfg, true);
  TraceRow row;
  row.iter = iter;
  row.e_attn = report.e_attn;
  row.e_ff = report.e_ff;
  row.e_total = report.e_total;
  const Tensor projections = matmul(bases.W, X, true, false);
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    const Tensor z = rmsnorm(slice_rows(projections, h * cfg.p, (h + 1) * cfg.p));
    row.head_rank.push_back(effective_rank(z));
    row.head_angle.push_back(X.cols() >= 2 ? average_angle(z) : 0.0);
  }
  row.full_rank = effective_rank(X);
  return row;
}

std::string trace_csv_header(std::size_t heads) {
  std::string header = "iter,e_attn,e_ff,e_total";
  for (std::size_t h = 0; h < heads; ++h) {
    header += ",rank_h" + std::to_string(h) + ",angle_h" + std::to_string(h);
  }
  header += ",full_rank";
  return header;
}

void export_trace(const EnergyTrace& trace, const std::filesystem::path& path, TraceFormat format) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write trace to " + path.string());
  if (format == TraceFormat::kCsv) {
    out << trace_csv_header(trace.heads) << '\n';
    for (const TraceRow& row : trace.rows) {
      out << row.iter << ',' << format_double(row.e_attn) << ',' << format_double(row.e_ff) << ','
          << format_double(row.e_total);
      for (std::size_t h = 0; h < trace.heads; ++h) {
        out << ',' << format_double(row.head_rank.at(h)) << ',' << format_double(row.head_angle.at(h));
      }
      out << ',' << format_double(row.full_rank) << '\n';
    }
  } else {
    nlohmann::ordered_json doc;
    doc["metadata"] = {{"heads", trace.heads},
                       {"singular_value_floor", kSingularValueFloor},
                       {"angle_units", "degrees"},
                       {"energy_form", "normalized"}};
    doc["rows"] = nlohmann::ordered_json::array();
    for (const TraceRow& row : trace.rows) {
      doc["rows"].push_back({{"iter", row.iter},
                             {"e_attn", row.e_attn},
                             {"e_ff", row.e_ff},
                             {"e_total", row.e_total},
                             {"head_rank", row.head_rank},
                             {"head_angle", row.head_angle},
                             {"full_rank", row.full_rank}});
    }
    out << doc.dump(2) << '\n';
  }
  if (!out) throw IoError("failed writing trace to " + path.string());
}

EnergyTrace import_trace(const std::filesystem::path& path, TraceFormat format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read trace " + path.string());
  EnergyTrace trace;
  if (format == TraceFormat::kJson) {
    try {
      const auto doc = nlohmann::json::parse(in);
      trace.heads = doc.at("metadata").at("heads").get<std::size_t>();
      for (const auto& r : doc.at("rows")) {
        TraceRow row;
        row.iter = r.at("iter").get<std::size_t>();
        row.e_attn = r.at("e_attn").get<double>();
        row.e_ff = r.at("e_ff").get<double>();
        row.e_total = r.at("e_total").get<double>();
        row.head_rank = r.at("head_rank").get<std::vector<double>>();
        row.head_angle = r.at("head_angle").get<std::vector<double>>();
        row.full_rank = r.at("full_rank").get<double>();
        if (row.head_rank.size() != trace.heads || row.head_angle.size() != trace.heads) {
          throw ParseError(path.string() + ": row " + std::to_string(row.iter) + " has the wrong number of heads");
        }
        trace.rows.push_back(std::move(row));
      }
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string() + ": " + e.what());
    }
    return trace;
  }
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": empty trace file");
  const auto header = split(line, ',');
  if (header.size() < 5 || (header.size() - 5) % 2 != 0) {
    throw ParseError(path.string() + ":1: unexpected trace header");
  }
  trace.heads = (header.size() - 5) / 2;
  if (line != trace_csv_header(trace.heads)) throw ParseError(path.string() + ":1: unexpected trace header");
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != header.size()) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                       std::to_string(header.size()) + " fields");
    }
    try {
      TraceRow row;
      row.iter = std::stoull(f[0]);
      row.e_attn = std::stod(f[1]);
      row.e_ff = std::stod(f[2]);
      row.e_total = std::stod(f[3]);
      for (std::size_t h = 0; h < trace.heads; ++h) {
        row.head_rank.push_back(std::stod(f[4 + 2 * h]));
        row.head_angle.push_back(std::stod(f[5 + 2 * h]));
      }
      row.full_rank = std::stod(f.back());
      trace.rows.push_back(std::move(row));
    } catch (const std::logic_error&) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": malformed number");
    }
  }
  return trace;
}

EnergyTrace mean_trace(std::span<const EnergyTrace> traces) {
  if (traces.empty()) return {};
  EnergyTrace out = traces.front();
  const double n = static_cast<double>(traces.size());
  for (std::size_t k = 1; k < traces.size(); ++k) {
    const EnergyTrace& t = traces[k];
    if (t.rows.size() != out.rows.size() || t.heads != out.heads) {
      throw DimensionError("mean_trace: traces differ in length or head count");
    }
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      TraceRow& acc = out.rows[r];
      const TraceRow& row = t.rows[r];
      acc.e_attn += row.e_attn;
      acc.e_ff += row.e_ff;
      acc.e_total += row.e_total;
      acc.full_rank += row.full_rank;
      for (std::size_t h = 0; h < t.heads; ++h) {
        acc.head_rank[h] += row.head_rank[h];
        acc.head_angle[h] += row.head_angle[h];
      }
    }
  }
  for (TraceRow& acc : out.rows) {
    acc.e_attn /= n;
    acc.e_ff /= n;
    acc.e_total /= n;
    acc.full_rank /= n;
    for (auto& v : acc.head_rank) v /= n;
    for (auto& v : acc.head_angle) v /= n;
  }
  return out;
}

bool energy_nonincreasing(const EnergyTrace& trace) {
  for (std::size_t r = 1; r < trace.rows.size(); ++r) {
    if (trace.rows[r].e_total > trace.rows[r - 1].e_total) return false;
  }
  return true;
}

}  // namespace hyperset
