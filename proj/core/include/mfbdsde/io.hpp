#pragma once

#include <string>
#include <vector>

#include "mfbdsde/common.hpp"

namespace mfbdsde {

// Shortest decimal string that round-trips the double exactly.
std::string format_double(double v);

// One named solution field laid out as point-indexed column blocks of `dim`
// coordinates (the in-memory convention of every solver).
struct CsvField {
  std::string name;
  const MatrixXd* values = nullptr;
  int dim = 1;
};

// Fixed schema: particle,step,field,coordinate,value. Throws NumericalError
// on I/O failure, naming the path.
void write_solution_csv(const std::string& path, const std::vector<CsvField>& fields);

// Two-column plot data with a one-line header.
void write_series_csv(const std::string& path, const std::string& xname,
                      const std::string& yname, const std::vector<double>& x,
                      const std::vector<double>& y);

void write_text_file(const std::string& path, const std::string& text);

}  // namespace mfbdsde
