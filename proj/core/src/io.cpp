#include "mfbdsde/io.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>

namespace mfbdsde {

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) return buf;
  }
  return buf;
}

namespace {

std::ofstream open_or_throw(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw NumericalError("cannot open output file: " + path);
  return out;
}

void close_or_throw(std::ofstream& out, const std::string& path) {
  out.flush();
  if (!out) throw NumericalError("write failed: " + path);
}

}  // namespace

void write_solution_csv(const std::string& path, const std::vector<CsvField>& fields) {
  std::ofstream out = open_or_throw(path);
  out << "particle,step,field,coordinate,value\n";
  for (const CsvField& field : fields) {
    if (!field.values) continue;
    const MatrixXd& m = *field.values;
    const int points = static_cast<int>(m.cols()) / field.dim;
    for (int a = 0; a < m.rows(); ++a)
      for (int i = 0; i < points; ++i)
        for (int r = 0; r < field.dim; ++r)
          out << a << ',' << i << ',' << field.name << ',' << r << ','
              << format_double(m(a, i * field.dim + r)) << '\n';
  }
  close_or_throw(out, path);
}

void write_series_csv(const std::string& path, const std::string& xname,
                      const std::string& yname, const std::vector<double>& x,
                      const std::vector<double>& y) {
  if (x.size() != y.size())
    throw NumericalError("series length mismatch writing " + path);
  std::ofstream out = open_or_throw(path);
  out << xname << ',' << yname << '\n';
  for (std::size_t i = 0; i < x.size(); ++i)
    out << format_double(x[i]) << ',' << format_double(y[i]) << '\n';
  close_or_throw(out, path);
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out = open_or_throw(path);
  out << text;
  close_or_throw(out, path);
}

}  // namespace mfbdsde
