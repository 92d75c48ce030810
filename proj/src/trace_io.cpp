#include "mgse/trace_io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <system_error>

namespace mgse {

namespace {

void append_shortest(std::string& line, double value) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  line.append(buf, res.ptr);
}

void append_time(std::string& line, double value) {
  char buf[48];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value, std::chars_format::fixed, 9);
  line.append(buf, res.ptr);
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_number(const std::string& cell, std::size_t line_no) {
  double value = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  const auto res = std::from_chars(first, last, value);
  if (res.ec != std::errc() || res.ptr != last) {
    throw CsvError("line " + std::to_string(line_no) + ": cannot parse '" + cell + "' as a number");
  }
  return value;
}

}  // namespace

void write_csv(std::ostream& out, const CsvTable& table) {
  std::string line = "t";
  for (const auto& c : table.columns) {
    line += ',';
    line += c;
  }
  line += '\n';
  out << line;
  for (std::size_t k = 0; k < table.t.size(); ++k) {
    line.clear();
    append_time(line, table.t[k]);
    const auto& row = table.rows[k];
    for (Eigen::Index i = 0; i < row.size(); ++i) {
      line += ',';
      append_shortest(line, row(i));
    }
    line += '\n';
    out << line;
  }
}

CsvTable read_csv(std::istream& in) {
  CsvTable table;
  std::string line;
  if (!std::getline(in, line)) throw CsvError("missing header row");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  auto header = split(line);
  if (header.empty() || header.front() != "t") throw CsvError("header must start with 't'");
  table.columns.assign(header.begin() + 1, header.end());
  const auto width = table.columns.size();

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != width + 1) {
      throw CsvError("line " + std::to_string(line_no) + ": expected " +
                     std::to_string(width + 1) + " fields, got " + std::to_string(cells.size()));
    }
    table.t.push_back(parse_number(cells[0], line_no));
    Vector row(static_cast<Eigen::Index>(width));
    for (std::size_t i = 0; i < width; ++i) {
      row(static_cast<Eigen::Index>(i)) = parse_number(cells[i + 1], line_no);
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

void write_csv_file(const std::filesystem::path& path, const CsvTable& table) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CsvError("cannot open " + path.string() + " for writing");
  write_csv(out, table);
  if (!out) throw CsvError("failed writing " + path.string());
}

CsvTable read_csv_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CsvError("cannot open " + path.string());
  try {
    return read_csv(in);
  } catch (const CsvError& e) {
    throw CsvError(path.string() + ": " + e.what());
  }
}

namespace {

CsvTable plant_table(const PlantTrace& trace, bool measured) {
  CsvTable table;
  table.columns = trace.state_labels;
  table.columns.insert(table.columns.end(), trace.input_labels.begin(), trace.input_labels.end());
  table.t.reserve(trace.records.size());
  table.rows.reserve(trace.records.size());
  for (const auto& rec : trace.records) {
    const Vector& x = measured ? rec.noisy_measurement : rec.true_state;
    const Vector& u = measured ? rec.measured_inputs : rec.true_inputs;
    Vector row(x.size() + u.size());
    row << x, u;
    table.t.push_back(rec.t);
    table.rows.push_back(std::move(row));
  }
  return table;
}

}  // namespace

CsvTable truth_table(const PlantTrace& trace) { return plant_table(trace, false); }
CsvTable measurement_table(const PlantTrace& trace) { return plant_table(trace, true); }

PlantTrace plant_trace_from_tables(const CsvTable& truth, const CsvTable& measured,
                                   std::size_t n_states) {
  if (truth.columns != measured.columns) {
    throw CsvError("truth and measurement traces have different columns");
  }
  if (truth.t.size() != measured.t.size()) {
    throw CsvError("truth and measurement traces have different lengths");
  }
  if (n_states > truth.columns.size()) throw CsvError("trace has too few columns");
  const auto ns = static_cast<Eigen::Index>(n_states);
  const auto ni = static_cast<Eigen::Index>(truth.columns.size() - n_states);

  PlantTrace trace;
  trace.state_labels.assign(truth.columns.begin(), truth.columns.begin() + ns);
  trace.input_labels.assign(truth.columns.begin() + ns, truth.columns.end());
  for (std::size_t k = 0; k < truth.t.size(); ++k) {
    if (truth.t[k] != measured.t[k]) {
      throw CsvError("truth and measurement timestamps differ at row " + std::to_string(k + 1));
    }
    TraceRecord rec;
    rec.t = truth.t[k];
    rec.true_state = truth.rows[k].head(ns);
    rec.true_inputs = truth.rows[k].tail(ni);
    rec.noisy_measurement = measured.rows[k].head(ns);
    rec.measured_inputs = measured.rows[k].tail(ni);
    trace.records.push_back(std::move(rec));
  }
  if (trace.records.size() >= 2) {
    trace.step = std::round((trace.records[1].t - trace.records[0].t) * 1e9) / 1e9;
    for (std::size_t k = 1; k < trace.records.size(); ++k) {
      const double dt = trace.records[k].t - trace.records[k - 1].t;
      if (std::abs(dt - trace.step) > 1e-9) {
        throw CsvError("trace is not uniformly sampled at row " + std::to_string(k + 1));
      }
    }
  }
  return trace;
}

CsvTable estimate_table(const EstimateTrace& trace) {
  return {trace.labels, trace.t, trace.estimate};
}

}  // namespace mgse
