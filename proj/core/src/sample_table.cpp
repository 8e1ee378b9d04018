#include "shiftbench/sample_table.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "shiftbench/error.hpp"

namespace shiftbench {

namespace {

std::vector<std::string> split_csv_line(const std::string& line)
{
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::string trim(const std::string& s)
{
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos)
    return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool parse_double(const std::string& s, double& out)
{
  if (s.empty())
    return false;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (*first == '+')
    ++first;
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last && std::isfinite(out);
}

} // namespace

SampleTable::SampleTable(std::vector<std::string> columns)
    : names_(std::move(columns)), data_(names_.size())
{
  for (std::size_t i = 0; i < names_.size(); ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (names_[i] == names_[j])
        throw SchemaError("/columns", "duplicate column '" + names_[i] + "'");
}

int SampleTable::find_column(const std::string& name) const
{
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name)
      return static_cast<int>(i);
  return -1;
}

int SampleTable::column_index(const std::string& name) const
{
  const int c = find_column(name);
  if (c < 0)
    throw SchemaError("/columns", "sample has no column '" + name + "'");
  return c;
}

void SampleTable::reserve(std::size_t n)
{
  for (auto& col : data_)
    col.reserve(n);
}

void SampleTable::append_row(std::span<const double> values)
{
  if (values.size() != names_.size())
    throw ContractError("append_row: row width does not match column count");
  for (std::size_t c = 0; c < values.size(); ++c)
    data_[c].push_back(values[c]);
  ++rows_;
}

void SampleTable::add_column(const std::string& name, std::vector<double> values)
{
  if (find_column(name) >= 0)
    throw SchemaError("/columns", "duplicate column '" + name + "'");
  if (!names_.empty() && values.size() != rows_)
    throw ContractError("add_column: length does not match row count");
  if (names_.empty())
    rows_ = values.size();
  names_.push_back(name);
  data_.push_back(std::move(values));
}

std::span<const double> SampleTable::loss() const
{
  if (!loss_)
    throw SchemaError("/columns", std::string("sample has no ") + kLossColumn + " column");
  return *loss_;
}

void SampleTable::set_loss(std::vector<double> loss)
{
  if (loss.size() != rows_)
    throw ContractError("set_loss: length does not match row count");
  loss_ = std::move(loss);
}

std::span<const double> SampleTable::weights() const
{
  if (!weights_)
    throw ContractError("sample has no weights");
  return *weights_;
}

void SampleTable::set_weights(std::vector<double> w)
{
  if (w.size() != rows_)
    throw ContractError("set_weights: length does not match row count");
  for (double x : w)
    if (!(x >= 0) || !std::isfinite(x))
      throw DomainError("row weights must be finite and nonnegative");
  weights_ = std::move(w);
}

double SampleTable::total_weight() const
{
  if (!weights_)
    return static_cast<double>(rows_);
  double s = 0;
  for (double x : *weights_)
    s += x;
  return s;
}

SampleTable SampleTable::subset(const std::vector<std::size_t>& rows) const
{
  SampleTable out(names_);
  for (std::size_t c = 0; c < names_.size(); ++c) {
    out.data_[c].reserve(rows.size());
    for (std::size_t r : rows)
      out.data_[c].push_back(data_[c][r]);
  }
  out.rows_ = rows.size();
  if (loss_) {
    std::vector<double> l;
    l.reserve(rows.size());
    for (std::size_t r : rows)
      l.push_back((*loss_)[r]);
    out.loss_ = std::move(l);
  }
  if (weights_) {
    std::vector<double> w;
    w.reserve(rows.size());
    for (std::size_t r : rows)
      w.push_back((*weights_)[r]);
    out.weights_ = std::move(w);
  }
  return out;
}

SampleTable SampleTable::read_csv(std::istream& in)
{
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!trim(line).empty())
      break;
  }
  if (trim(line).empty())
    throw SchemaError("", "CSV input is empty; a header row is required", lineno);

  std::vector<std::string> header;
  for (auto& h : split_csv_line(line))
    header.push_back(trim(h));
  int loss_col = -1;
  std::vector<std::string> names;
  std::vector<int> target;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i].empty())
      throw SchemaError("", "empty column name in header at position " + std::to_string(i + 1), lineno);
    if (header[i] == kLossColumn) {
      if (loss_col >= 0)
        throw SchemaError("", std::string("duplicate ") + kLossColumn + " column", lineno);
      loss_col = static_cast<int>(i);
      target.push_back(-1);
    } else {
      target.push_back(static_cast<int>(names.size()));
      names.push_back(header[i]);
    }
  }
  SampleTable table;
  try {
    table = SampleTable(names);
  } catch (const SchemaError& e) {
    throw SchemaError("", e.what(), lineno);
  }
  std::vector<double> loss;
  std::vector<double> row(names.size());
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty())
      continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != header.size()) {
      std::ostringstream os;
      os << "line " << lineno << ": expected " << header.size() << " fields, found " << fields.size();
      throw SchemaError("", os.str(), lineno);
    }
    for (std::size_t i = 0; i < fields.size(); ++i) {
      double v = 0;
      const std::string f = trim(fields[i]);
      if (!parse_double(f, v)) {
        std::ostringstream os;
        os << "line " << lineno << ", column '" << header[i] << "': "
           << (f.empty() ? "missing value" : "not a finite number: '" + f + "'");
        throw SchemaError("", os.str(), lineno);
      }
      if (target[i] < 0)
        loss.push_back(v);
      else
        row[target[i]] = v;
    }
    table.append_row(row);
  }
  if (loss_col >= 0)
    table.set_loss(std::move(loss));
  return table;
}

SampleTable SampleTable::read_csv_file(const std::string& path)
{
  std::ifstream in(path);
  if (!in)
    throw SchemaError("", "cannot open data file '" + path + "'");
  return read_csv(in);
}

void SampleTable::write_csv(std::ostream& out) const
{
  const auto flags = out.flags();
  const auto prec = out.precision();
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (std::size_t c = 0; c < names_.size(); ++c)
    out << (c ? "," : "") << names_[c];
  if (loss_)
    out << (names_.empty() ? "" : ",") << kLossColumn;
  out << '\n';
  for (std::size_t r = 0; r < rows_; ++r) {
    for (std::size_t c = 0; c < names_.size(); ++c)
      out << (c ? "," : "") << data_[c][r];
    if (loss_)
      out << (names_.empty() ? "" : ",") << (*loss_)[r];
    out << '\n';
  }
  out.flags(flags);
  out.precision(prec);
}

double weighted_mean(const SampleTable& table, std::span<const double> values)
{
  double s = 0;
  double wsum = 0;
  for (std::size_t r = 0; r < values.size(); ++r) {
    const double w = table.weight(r);
    s += w * values[r];
    wsum += w;
  }
  return s / wsum;
}

} // namespace shiftbench
