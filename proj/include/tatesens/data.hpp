#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace tatesens {

enum class ColumnType { kNumeric, kBinary, kCategorical };

std::string to_string(ColumnType t);
ColumnType column_type_from_string(const std::string& s);

// A named typed vector. Categorical columns store level codes in `values`
// (0..levels.size()-1); `reference` indexes the level used as the dummy-coding
// referent.
struct Column {
  std::string name;
  ColumnType type = ColumnType::kNumeric;
  std::vector<double> values;
  std::vector<std::string> levels;
  std::size_t reference = 0;

  std::size_t size() const { return values.size(); }
  const std::string& level_of(std::size_t row) const;
  std::optional<std::size_t> level_index(const std::string& level) const;
};

Column numeric_column(std::string name, std::vector<double> values);
Column binary_column(std::string name, std::vector<double> values);
Column categorical_column(std::string name, std::vector<std::string> levels,
                          std::vector<double> codes, std::size_t reference = 0);
// Builds a categorical column from raw labels. Levels follow `levels` when
// given, otherwise order of first appearance.
Column categorical_from_labels(std::string name, const std::vector<std::string>& labels,
                               std::vector<std::string> levels = {});

// Rectangular, immutable after construction.
class DataTable {
 public:
  DataTable() = default;
  explicit DataTable(std::vector<Column> columns, std::optional<std::string> id_column = {});

  std::size_t n_rows() const { return n_rows_; }
  std::size_t n_cols() const { return columns_.size(); }
  const std::vector<Column>& columns() const { return columns_; }
  const std::optional<std::string>& id_column() const { return id_column_; }

  bool has(const std::string& name) const;
  const Column& column(const std::string& name) const;
  std::vector<std::string> names() const;

  DataTable select_rows(std::span<const std::size_t> rows) const;
  DataTable with_column(Column c) const;

 private:
  std::vector<Column> columns_;
  std::size_t n_rows_ = 0;
  std::optional<std::string> id_column_;
};

struct ColumnSchema {
  std::string name;
  ColumnType type = ColumnType::kNumeric;
  std::vector<std::string> levels;       // categorical; empty = first appearance
  std::optional<std::string> reference;  // categorical referent override
};

struct TableSchema {
  std::vector<ColumnSchema> columns;
  std::optional<std::string> id_column;
};

struct LoadReport {
  std::size_t rows_read = 0;
  std::size_t rows_dropped = 0;
  std::vector<std::string> warnings;
};

// Reads a comma-separated file with a header row. Only schema columns are
// kept. Rows with a missing value ("", "NA", ".") in any schema column are
// dropped and counted.
DataTable load_table(const std::string& path, const TableSchema& schema,
                     LoadReport* report = nullptr);
DataTable parse_table(const std::string& csv_text, const TableSchema& schema,
                      LoadReport* report = nullptr);
void write_table(const DataTable& table, const std::string& path);
std::vector<std::string> read_csv_header(const std::string& path);

// New categorical column whose levels are the cross-classification of the
// given categorical/binary columns, labels joined with '-'. The referent is the
// combination of the component referents.
DataTable cross_classify(const DataTable& table, const std::vector<std::string>& cols,
                         const std::string& new_name);

// Vertically stacks the named columns of two tables and appends a binary
// indicator (1 for rows of `first`). Categorical levels are unified by label.
DataTable stack_tables(const DataTable& first, const DataTable& second,
                       const std::vector<std::string>& cols, const std::string& indicator);

// ---------------------------------------------------------------------------
// Variable roles

struct SingleOutcome {
  std::string column;
};

// Wide pre/post outcome. Converted to two rows per subject for
// random-intercepts fitting.
struct PrePostOutcome {
  std::string pre;
  std::string post;
  std::string response_name = "Y";
  std::string period_name = "F";
  std::string subject_name = "subject";
};

struct LongOutcome {
  std::string column;
  std::string period;   // 0 = pre, 1 = post
  std::string subject;
};

using OutcomeRole = std::variant<SingleOutcome, PrePostOutcome, LongOutcome>;

struct VariableRoles {
  std::string treatment;
  OutcomeRole outcome;
  std::vector<std::string> x_covars;
  std::vector<std::string> z_modifiers;
  std::vector<std::string> v_modifiers;
};

class AnalysisContext {
 public:
  AnalysisContext(DataTable table, VariableRoles roles);

  const DataTable& table() const { return table_; }
  const VariableRoles& roles() const { return roles_; }
  bool is_long() const { return !std::holds_alternative<SingleOutcome>(roles_.outcome); }

  // One row per subject; identical to table() for single outcomes.
  const DataTable& subject_table() const { return subjects_; }
  // Two rows per subject (long form only).
  const DataTable& long_table() const { return long_; }
  // For each long_table row, the subject_table row it belongs to.
  const std::vector<std::size_t>& long_to_subject() const { return long_to_subject_; }

  const std::string& response_name() const { return response_; }
  const std::string& period_name() const { return period_; }
  const std::string& subject_name() const { return subject_; }

 private:
  DataTable table_;
  VariableRoles roles_;
  DataTable subjects_;
  DataTable long_;
  std::vector<std::size_t> long_to_subject_;
  std::string response_;
  std::string period_;
  std::string subject_;
};

// Validates roles against the table: columns exist, role sets disjoint,
// treatment binary, exactly one pre and one post row per subject in long form.
AnalysisContext declare_roles(DataTable table, VariableRoles roles);

// ---------------------------------------------------------------------------
// Target population

enum class PopulationKind { kFullDataset, kRepresentativeSample, kSummaryStats };

std::string to_string(PopulationKind k);
PopulationKind population_kind_from_string(const std::string& s);

struct MeanEstimate {
  double point = 0.0;
  std::optional<double> lo;
  std::optional<double> hi;

  bool has_interval() const { return lo.has_value() && hi.has_value(); }
};

struct JointCells {
  std::vector<std::string> columns;
  std::map<std::vector<std::string>, double> probability;
};

struct SummaryStats {
  std::map<std::string, MeanEstimate> z_means;
  std::optional<JointCells> joint_cells;
};

void validate(const SummaryStats& stats);

// Text format:
//   z_means.<key> = [point]            or  [point, lo, hi]
//   [joint_cells]
//   columns = a, b
//   level_a, level_b = probability
SummaryStats parse_summary_stats(const std::string& text);
SummaryStats load_summary_stats(const std::string& path);

class PopulationTarget {
 public:
  static PopulationTarget full_dataset(DataTable data, bool trial_identifiable = false,
                                       std::optional<std::string> membership_column = {});
  static PopulationTarget representative_sample(DataTable data, bool trial_identifiable = false,
                                                std::optional<std::string> membership_column = {});
  static PopulationTarget summary(SummaryStats stats);

  PopulationKind kind() const { return kind_; }
  bool has_dataset() const { return kind_ != PopulationKind::kSummaryStats; }
  const DataTable& dataset() const;
  const SummaryStats& stats() const;
  bool trial_identifiable() const { return trial_identifiable_; }
  const std::optional<std::string>& membership_column() const { return membership_; }

  // Mean of a population quantity. `key` is a column name, or "col=level"
  // for the proportion at a categorical level. Dataset means are exact for a
  // full dataset and carry a normal-theory interval for a representative
  // sample.
  MeanEstimate mean(const std::string& key, double ci_level = 0.95) const;

 private:
  PopulationKind kind_ = PopulationKind::kFullDataset;
  std::variant<DataTable, SummaryStats> data_;
  bool trial_identifiable_ = false;
  std::optional<std::string> membership_;
};

// Per-row values of "col" or the indicator of "col=level".
std::vector<double> key_values(const DataTable& table, const std::string& key);

// ---------------------------------------------------------------------------
// Effect-modifier coverage

struct ModifierCoverage {
  std::string column;
  bool checked = false;
  bool covered = true;
  std::string detail;
  // numeric columns
  double trial_min = 0, trial_max = 0, pop_min = 0, pop_max = 0;
  // categorical columns
  std::vector<std::string> uncovered_levels;
};

struct CoverageReport {
  std::vector<ModifierCoverage> items;
  std::vector<std::string> flags;  // one per uncovered modifier
  std::vector<std::string> notes;
  bool ok() const { return flags.empty(); }
};

CoverageReport check_modifier_coverage(const DataTable& trial, const PopulationTarget& pop,
                                       std::span<const std::string> modifiers);
// Checks every Z of the context and notes that V modifiers cannot be checked.
CoverageReport check_modifier_coverage(const AnalysisContext& ctx, const PopulationTarget& pop);

// Population rows whose modifier values all lie inside trial support.
DataTable trim_to_coverage(const DataTable& population, const DataTable& trial,
                           std::span<const std::string> modifiers);

}  // namespace tatesens
