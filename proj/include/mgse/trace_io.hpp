#pragma once

// CSV interchange for traces.
//
// Layout: header row `t,<label>,<label>,...`, then one row per sample. `t` is written
// with 9 decimals; every other value uses the shortest representation that parses
// back to the same double, so a write/read cycle is value-identical.

#include <iosfwd>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "mgse/estimation.hpp"
#include "mgse/linalg.hpp"
#include "mgse/sim.hpp"

namespace mgse {

class CsvError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CsvTable {
  std::vector<std::string> columns;  // excluding `t`
  std::vector<double> t;
  std::vector<Vector> rows;
};

void write_csv(std::ostream& out, const CsvTable& table);
CsvTable read_csv(std::istream& in);
void write_csv_file(const std::filesystem::path& path, const CsvTable& table);
CsvTable read_csv_file(const std::filesystem::path& path);

/// True states followed by true inputs.
CsvTable truth_table(const PlantTrace& trace);
/// Noisy states followed by noisy inputs.
CsvTable measurement_table(const PlantTrace& trace);
/// Rebuilds a trace from its truth and measurement tables. `n_states` splits the
/// columns into state and input channels.
PlantTrace plant_trace_from_tables(const CsvTable& truth, const CsvTable& measured,
                                   std::size_t n_states);

CsvTable estimate_table(const EstimateTrace& trace);

}  // namespace mgse
