#pragma once

#include <cstddef>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace shiftbench {

inline constexpr const char* kLossColumn = "__loss";

/// Column-oriented table of records plus an optional loss column and
/// optional nonnegative row weights (weights are in-process only; they let
/// an enumerated support stand in for a sample).
class SampleTable {
public:
  SampleTable() = default;
  explicit SampleTable(std::vector<std::string> columns);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return names_.size(); }
  const std::vector<std::string>& columns() const { return names_; }
  /// -1 if absent.
  int find_column(const std::string& name) const;
  /// Throws SchemaError if absent.
  int column_index(const std::string& name) const;
  std::span<const double> column(int c) const { return data_[c]; }
  std::span<const double> column(const std::string& name) const { return data_[column_index(name)]; }
  double at(std::size_t row, int c) const { return data_[c][row]; }

  void reserve(std::size_t n);
  void append_row(std::span<const double> values);
  void add_column(const std::string& name, std::vector<double> values);

  bool has_loss() const { return loss_.has_value(); }
  std::span<const double> loss() const;
  void set_loss(std::vector<double> loss);

  bool has_weights() const { return weights_.has_value(); }
  std::span<const double> weights() const;
  void set_weights(std::vector<double> w);
  double weight(std::size_t row) const { return weights_ ? (*weights_)[row] : 1.0; }
  double total_weight() const;

  SampleTable subset(const std::vector<std::size_t>& rows) const;

  /// Header row required; `__loss` column optional; every field must parse
  /// as a finite number. Errors carry the 1-based line number.
  static SampleTable read_csv(std::istream& in);
  static SampleTable read_csv_file(const std::string& path);
  void write_csv(std::ostream& out) const;

private:
  std::vector<std::string> names_;
  std::vector<std::vector<double>> data_;
  std::optional<std::vector<double>> loss_;
  std::optional<std::vector<double>> weights_;
  std::size_t rows_ = 0;
};

/// Weighted mean (uses row weights when present).
double weighted_mean(const SampleTable& table, std::span<const double> values);

} // namespace shiftbench
