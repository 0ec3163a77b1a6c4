#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "normscale/exphost.hpp"

namespace normscale {

inline const char* csv_header() {
  return "optimizer,eta,lambda,seed,final_weight_norm,train_loss,val_error,test_error,diverged";
}

/// Decimal with 9 significant digits; nan spelled uniformly.
inline std::string format_g9(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

/// Rows sorted by (optimizer, lambda, eta, seed); LF endings; 9 significant
/// digits for floats.
inline void emit_csv(const SweepTable& table, std::ostream& os) {
  std::vector<const RunRecord*> rows;
  rows.reserve(table.records.size());
  for (const auto& r : table.records) rows.push_back(&r);
  std::sort(rows.begin(), rows.end(), [](const RunRecord* a, const RunRecord* b) {
    const int byname = std::string(rule_name(a->rule)).compare(rule_name(b->rule));
    if (byname != 0) return byname < 0;
    if (a->lambda != b->lambda) return a->lambda < b->lambda;
    if (a->eta != b->eta) return a->eta < b->eta;
    return a->seed < b->seed;
  });

  os << csv_header() << '\n';
  for (const RunRecord* r : rows) {
    os << rule_name(r->rule) << ',' << format_g9(r->eta) << ','
       << format_g9(r->lambda) << ',' << r->seed << ','
       << format_g9(r->final_weight_norm) << ',' << format_g9(r->train_loss)
       << ',' << format_g9(r->val_error) << ',' << format_g9(r->test_error)
       << ',' << (r->diverged ? 1 : 0) << '\n';
  }
  if (!os) throw contract_error("emit_csv: write failure");
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_double(const std::string& s, const char* what) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0')
    throw contract_error(std::string("parse_csv: bad ") + what + " value: " + s);
  return v;
}

}  // namespace detail

/// Inverse of emit_csv. The grid is reconstructed from the distinct lambda
/// and eta values; every (lambda, eta) cell must hold the same number of
/// replicate rows. Per-epoch norm traces and config hashes are not part of
/// the CSV and come back empty.
inline SweepTable parse_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw contract_error("parse_csv: empty input");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != csv_header()) throw contract_error("parse_csv: unexpected header");

  std::vector<RunRecord> recs;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = detail::split_csv_line(line);
    if (f.size() != 9) throw contract_error("parse_csv: expected 9 fields per row");
    RunRecord r;
    const auto rule = rule_from_name(f[0]);
    if (!rule) throw contract_error("parse_csv: unknown optimizer: " + f[0]);
    r.rule = *rule;
    r.eta = detail::parse_double(f[1], "eta");
    r.lambda = detail::parse_double(f[2], "lambda");
    r.seed = std::strtoull(f[3].c_str(), nullptr, 10);
    r.final_weight_norm = detail::parse_double(f[4], "final_weight_norm");
    r.train_loss = detail::parse_double(f[5], "train_loss");
    r.val_error = detail::parse_double(f[6], "val_error");
    r.test_error = detail::parse_double(f[7], "test_error");
    if (f[8] != "0" && f[8] != "1") throw contract_error("parse_csv: diverged must be 0 or 1");
    r.diverged = f[8] == "1";
    recs.push_back(std::move(r));
  }
  if (recs.empty()) {
    SweepTable empty;
    empty.seeds_per_cell = 1;
    return empty;
  }

  SweepTable table;
  for (const auto& r : recs) {
    if (std::find(table.lambdas.begin(), table.lambdas.end(), r.lambda) == table.lambdas.end())
      table.lambdas.push_back(r.lambda);
    if (std::find(table.etas.begin(), table.etas.end(), r.eta) == table.etas.end())
      table.etas.push_back(r.eta);
  }
  std::sort(table.lambdas.begin(), table.lambdas.end());
  std::sort(table.etas.begin(), table.etas.end());

  std::map<std::pair<double, double>, std::vector<RunRecord>> cells;
  for (auto& r : recs) cells[{r.lambda, r.eta}].push_back(std::move(r));
  const std::size_t expected_cells = table.lambdas.size() * table.etas.size();
  if (cells.size() != expected_cells)
    throw contract_error("parse_csv: incomplete grid");
  const std::size_t reps = cells.begin()->second.size();
  for (auto& [key, v] : cells) {
    if (v.size() != reps) throw contract_error("parse_csv: uneven replicate counts");
    std::sort(v.begin(), v.end(),
              [](const RunRecord& a, const RunRecord& b) { return a.seed < b.seed; });
  }
  table.seeds_per_cell = static_cast<int>(reps);
  table.records.resize(expected_cells * reps);
  for (std::size_t li = 0; li < table.lambdas.size(); ++li)
    for (std::size_t ei = 0; ei < table.etas.size(); ++ei) {
      auto& v = cells[{table.lambdas[li], table.etas[ei]}];
      for (std::size_t r = 0; r < reps; ++r)
        table.records[table.cell_index(li, ei, static_cast<int>(r))] = std::move(v[r]);
    }
  return table;
}

enum class PlotQuantity { norm, test_error };

inline const char* plot_quantity_name(PlotQuantity q) {
  return q == PlotQuantity::norm ? "norm" : "test_error";
}

inline std::optional<PlotQuantity> plot_quantity_from_name(std::string_view s) {
  if (s == "norm") return PlotQuantity::norm;
  if (s == "test_error") return PlotQuantity::test_error;
  return std::nullopt;
}

/// Surface data: one "log10(lambda) log10(eta) value" triple per cell,
/// lambda-major with a blank line between lambda blocks. The norm quantity
/// is emitted as log10 of the replicate-mean norm; test error is emitted
/// directly. Cells whose replicates all diverged yield nan.
inline void emit_plot_data(const SweepTable& table, PlotQuantity q,
                           std::ostream& os) {
  detail::require(!table.records.empty(), "emit_plot_data: empty table");
  const std::size_t expected = table.lambdas.size() * table.etas.size() *
                               static_cast<std::size_t>(table.seeds_per_cell);
  detail::require(table.records.size() == expected, "emit_plot_data: incomplete grid");

  for (std::size_t li = 0; li < table.lambdas.size(); ++li) {
    if (li > 0) os << '\n';
    detail::require(table.lambdas[li] > 0.0 , "emit_plot_data: lambda must be positive");
    for (std::size_t ei = 0; ei < table.etas.size(); ++ei) {
      detail::require(table.etas[ei] > 0.0, "emit_plot_data: eta must be positive");
      double acc = 0.0;
      int n = 0;
      for (int r = 0; r < table.seeds_per_cell; ++r) {
        const RunRecord& rec = table.records[table.cell_index(li, ei, r)];
        if (rec.diverged) continue;
        acc += q == PlotQuantity::norm ? rec.final_weight_norm : rec.test_error;
        ++n;
      }
      double value = std::numeric_limits<double>::quiet_NaN();
      if (n > 0) {
        value = acc / n;
        if (q == PlotQuantity::norm) value = std::log10(value);
      }
      os << format_g9(std::log10(table.lambdas[li])) << ' '
         << format_g9(std::log10(table.etas[ei])) << ' ' << format_g9(value)
         << '\n';
    }
  }
  if (!os) throw contract_error("emit_plot_data: write failure");
}

}  // namespace normscale
