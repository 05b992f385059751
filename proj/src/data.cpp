#include "tatesens/data.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include <boost/math/distributions/normal.hpp>

#include "tatesens/error.hpp"

namespace tatesens {

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(trim(field));
      field.clear();
    } else {
      field.push_back(c);
    }
  }
  out.push_back(trim(field));
  return out;
}

bool is_missing(const std::string& s) { return s.empty() || s == "NA" || s == "."; }

std::optional<double> parse_double(const std::string& s) {
  double v = 0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (!s.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || !std::isfinite(v)) return std::nullopt;
  return v;
}

std::string format_number(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

void check_binary(const std::string& name, const std::vector<double>& values) {
  for (double v : values) {
    if (v != 0.0 && v != 1.0) {
      throw validation_error("binary column '" + name + "' contains value " + format_number(v) +
                             " outside {0,1}");
    }
  }
}

}  // namespace

std::string to_string(ColumnType t) {
  switch (t) {
    case ColumnType::kNumeric: return "numeric";
    case ColumnType::kBinary: return "binary";
    case ColumnType::kCategorical: return "categorical";
  }
  return "?";
}

ColumnType column_type_from_string(const std::string& s) {
  if (s == "numeric") return ColumnType::kNumeric;
  if (s == "binary") return ColumnType::kBinary;
  if (s == "categorical") return ColumnType::kCategorical;
  throw usage_error("unknown column type '" + s + "' (numeric|binary|categorical)");
}

const std::string& Column::level_of(std::size_t row) const {
  return levels.at(static_cast<std::size_t>(values.at(row)));
}

std::optional<std::size_t> Column::level_index(const std::string& level) const {
  auto it = std::find(levels.begin(), levels.end(), level);
  if (it == levels.end()) return std::nullopt;
  return static_cast<std::size_t>(it - levels.begin());
}

Column numeric_column(std::string name, std::vector<double> values) {
  return Column{std::move(name), ColumnType::kNumeric, std::move(values), {}, 0};
}

Column binary_column(std::string name, std::vector<double> values) {
  check_binary(name, values);
  return Column{std::move(name), ColumnType::kBinary, std::move(values), {}, 0};
}

Column categorical_column(std::string name, std::vector<std::string> levels,
                          std::vector<double> codes, std::size_t reference) {
  if (levels.empty()) throw validation_error("categorical column '" + name + "' has no levels");
  if (reference >= levels.size()) {
    throw validation_error("categorical column '" + name + "' reference out of range");
  }
  for (double c : codes) {
    if (c < 0 || c >= static_cast<double>(levels.size()) || c != std::floor(c)) {
      throw validation_error("categorical column '" + name + "' has an invalid level code");
    }
  }
  return Column{std::move(name), ColumnType::kCategorical, std::move(codes), std::move(levels),
                reference};
}

Column categorical_from_labels(std::string name, const std::vector<std::string>& labels,
                               std::vector<std::string> levels) {
  const bool fixed = !levels.empty();
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < levels.size(); ++i) index.emplace(levels[i], i);
  std::vector<double> codes;
  codes.reserve(labels.size());
  for (const auto& l : labels) {
    auto it = index.find(l);
    if (it == index.end()) {
      if (fixed) {
        throw validation_error("categorical column '" + name + "' has undeclared level '" + l +
                               "'");
      }
      it = index.emplace(l, levels.size()).first;
      levels.push_back(l);
    }
    codes.push_back(static_cast<double>(it->second));
  }
  return categorical_column(std::move(name), std::move(levels), std::move(codes));
}

// ---------------------------------------------------------------------------

DataTable::DataTable(std::vector<Column> columns, std::optional<std::string> id_column)
    : columns_(std::move(columns)), id_column_(std::move(id_column)) {
  n_rows_ = columns_.empty() ? 0 : columns_.front().size();
  std::set<std::string> seen;
  for (const auto& c : columns_) {
    if (c.size() != n_rows_) {
      throw validation_error("column '" + c.name + "' has " + std::to_string(c.size()) +
                             " rows, expected " + std::to_string(n_rows_));
    }
    if (!seen.insert(c.name).second) throw validation_error("duplicate column '" + c.name + "'");
    if (c.type == ColumnType::kBinary) check_binary(c.name, c.values);
    if (c.type == ColumnType::kCategorical && c.levels.empty()) {
      throw validation_error("categorical column '" + c.name + "' carries no level set");
    }
  }
  if (id_column_ && !seen.count(*id_column_)) {
    throw validation_error("id column '" + *id_column_ + "' not present");
  }
}

bool DataTable::has(const std::string& name) const {
  return std::any_of(columns_.begin(), columns_.end(),
                     [&](const Column& c) { return c.name == name; });
}

const Column& DataTable::column(const std::string& name) const {
  for (const auto& c : columns_) {
    if (c.name == name) return c;
  }
  throw validation_error("no column named '" + name + "'");
}

std::vector<std::string> DataTable::names() const {
  std::vector<std::string> out;
  for (const auto& c : columns_) out.push_back(c.name);
  return out;
}

DataTable DataTable::select_rows(std::span<const std::size_t> rows) const {
  std::vector<Column> cols;
  cols.reserve(columns_.size());
  for (const auto& c : columns_) {
    Column s = c;
    s.values.clear();
    s.values.reserve(rows.size());
    for (std::size_t r : rows) s.values.push_back(c.values.at(r));
    cols.push_back(std::move(s));
  }
  DataTable out;
  out.columns_ = std::move(cols);
  out.n_rows_ = rows.size();
  out.id_column_ = id_column_;
  return out;
}

DataTable DataTable::with_column(Column c) const {
  auto cols = columns_;
  cols.erase(std::remove_if(cols.begin(), cols.end(),
                            [&](const Column& x) { return x.name == c.name; }),
             cols.end());
  cols.push_back(std::move(c));
  return DataTable(std::move(cols), id_column_);
}

// ---------------------------------------------------------------------------

DataTable parse_table(const std::string& csv_text, const TableSchema& schema, LoadReport* report) {
  std::istringstream in(csv_text);
  std::string line;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    if (!trim(line).empty()) {
      header = split_csv_line(line);
      break;
    }
  }
  if (header.empty()) throw validation_error("no rows: file is empty");

  std::vector<std::size_t> pos;
  for (const auto& cs : schema.columns) {
    auto it = std::find(header.begin(), header.end(), cs.name);
    if (it == header.end()) throw validation_error("schema column '" + cs.name + "' not in header");
    pos.push_back(static_cast<std::size_t>(it - header.begin()));
  }

  const std::size_t k = schema.columns.size();
  std::vector<std::vector<std::string>> raw(k);
  LoadReport rep;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split_csv_line(line);
    if (fields.size() != header.size()) {
      throw validation_error("line " + std::to_string(line_no) + " has " +
                             std::to_string(fields.size()) + " fields, header has " +
                             std::to_string(header.size()));
    }
    ++rep.rows_read;
    bool missing = false;
    for (std::size_t j = 0; j < k; ++j) missing = missing || is_missing(fields[pos[j]]);
    if (missing) {
      ++rep.rows_dropped;
      continue;
    }
    for (std::size_t j = 0; j < k; ++j) raw[j].push_back(fields[pos[j]]);
  }
  if (rep.rows_read == 0) throw validation_error("no rows: file has a header but no data");
  if (rep.rows_dropped > 0) {
    rep.warnings.push_back("dropped " + std::to_string(rep.rows_dropped) + " of " +
                           std::to_string(rep.rows_read) +
                           " rows with missing values in role columns");
  }
  if (rep.rows_dropped == rep.rows_read) {
    throw validation_error("no rows: every row has a missing role value");
  }

  std::vector<Column> cols;
  for (std::size_t j = 0; j < k; ++j) {
    const auto& cs = schema.columns[j];
    if (cs.type == ColumnType::kCategorical) {
      Column c = categorical_from_labels(cs.name, raw[j], cs.levels);
      if (cs.reference) {
        auto idx = c.level_index(*cs.reference);
        if (!idx) {
          throw validation_error("reference level '" + *cs.reference + "' not a level of '" +
                                 cs.name + "'");
        }
        c.reference = *idx;
      }
      cols.push_back(std::move(c));
      continue;
    }
    std::vector<double> v;
    v.reserve(raw[j].size());
    for (const auto& s : raw[j]) {
      auto d = parse_double(s);
      if (!d) {
        throw validation_error("column '" + cs.name + "' declared " + to_string(cs.type) +
                               " but has value '" + s + "'");
      }
      v.push_back(*d);
    }
    cols.push_back(cs.type == ColumnType::kBinary ? binary_column(cs.name, std::move(v))
                                                  : numeric_column(cs.name, std::move(v)));
  }
  for (const auto& w : rep.warnings) std::clog << "warning: [core-data] " << w << "\n";
  if (report) *report = rep;
  return DataTable(std::move(cols), schema.id_column);
}

DataTable load_table(const std::string& path, const TableSchema& schema, LoadReport* report) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_table(ss.str(), schema, report);
}

std::vector<std::string> read_csv_header(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot read '" + path + "'");
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) return split_csv_line(line);
  }
  throw validation_error("no rows: '" + path + "' is empty");
}

void write_table(const DataTable& table, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot write '" + path + "'");
  const auto& cols = table.columns();
  for (std::size_t j = 0; j < cols.size(); ++j) out << (j ? "," : "") << csv_quote(cols[j].name);
  out << "\n";
  for (std::size_t i = 0; i < table.n_rows(); ++i) {
    for (std::size_t j = 0; j < cols.size(); ++j) {
      if (j) out << ",";
      if (cols[j].type == ColumnType::kCategorical) {
        out << csv_quote(cols[j].level_of(i));
      } else {
        out << format_number(cols[j].values[i]);
      }
    }
    out << "\n";
  }
}

namespace {

std::vector<std::string> labels_of(const Column& c) {
  if (c.type == ColumnType::kCategorical) return c.levels;
  if (c.type == ColumnType::kBinary) return {"0", "1"};
  throw validation_error("column '" + c.name + "' is numeric; expected categorical or binary");
}

std::string label_at(const Column& c, std::size_t row) {
  if (c.type == ColumnType::kCategorical) return c.level_of(row);
  if (c.type == ColumnType::kBinary) return c.values[row] != 0.0 ? "1" : "0";
  return format_number(c.values[row]);
}

}  // namespace

DataTable cross_classify(const DataTable& table, const std::vector<std::string>& cols,
                         const std::string& new_name) {
  if (cols.size() < 2) throw validation_error("cross-classification needs at least two columns");
  std::vector<const Column*> src;
  std::vector<std::vector<std::string>> lv;
  for (const auto& n : cols) {
    src.push_back(&table.column(n));
    lv.push_back(labels_of(*src.back()));
  }
  // Levels enumerate the product with the first column varying slowest.
  std::vector<std::string> levels{""};
  for (const auto& l : lv) {
    std::vector<std::string> next;
    for (const auto& prefix : levels) {
      for (const auto& s : l) next.push_back(prefix.empty() ? s : prefix + "-" + s);
    }
    levels = std::move(next);
  }
  std::vector<double> codes(table.n_rows());
  for (std::size_t i = 0; i < table.n_rows(); ++i) {
    std::size_t code = 0;
    for (std::size_t j = 0; j < src.size(); ++j) {
      code = code * lv[j].size() + static_cast<std::size_t>(src[j]->values[i]);
    }
    codes[i] = static_cast<double>(code);
  }
  std::size_t ref = 0;
  for (std::size_t j = 0; j < src.size(); ++j) {
    const std::size_t r = src[j]->type == ColumnType::kCategorical ? src[j]->reference : 0;
    ref = ref * lv[j].size() + r;
  }
  return table.with_column(categorical_column(new_name, std::move(levels), std::move(codes), ref));
}

DataTable stack_tables(const DataTable& first, const DataTable& second,
                       const std::vector<std::string>& cols, const std::string& indicator) {
  std::vector<Column> out;
  for (const auto& name : cols) {
    if (!first.has(name) || !second.has(name)) {
      throw validation_error("covariate '" + name + "' missing from " +
                             (first.has(name) ? "second" : "first") + " table");
    }
    const Column& a = first.column(name);
    const Column& b = second.column(name);
    const bool cat_a = a.type == ColumnType::kCategorical;
    const bool cat_b = b.type == ColumnType::kCategorical;
    if (cat_a != cat_b) {
      throw validation_error("column '" + name + "' is categorical in only one table");
    }
    if (cat_a) {
      std::vector<std::string> labels;
      labels.reserve(a.size() + b.size());
      for (std::size_t i = 0; i < a.size(); ++i) labels.push_back(a.level_of(i));
      for (std::size_t i = 0; i < b.size(); ++i) labels.push_back(b.level_of(i));
      std::vector<std::string> levels = a.levels;
      for (const auto& l : b.levels) {
        if (std::find(levels.begin(), levels.end(), l) == levels.end()) levels.push_back(l);
      }
      Column c = categorical_from_labels(name, labels, levels);
      c.reference = a.reference;
      out.push_back(std::move(c));
    } else {
      std::vector<double> v = a.values;
      v.insert(v.end(), b.values.begin(), b.values.end());
      Column c = a;
      c.type = (a.type == ColumnType::kBinary && b.type == ColumnType::kBinary)
                   ? ColumnType::kBinary
                   : ColumnType::kNumeric;
      c.values = std::move(v);
      out.push_back(std::move(c));
    }
  }
  std::vector<double> ind(first.n_rows() + second.n_rows(), 0.0);
  std::fill(ind.begin(), ind.begin() + static_cast<std::ptrdiff_t>(first.n_rows()), 1.0);
  out.push_back(binary_column(indicator, std::move(ind)));
  return DataTable(std::move(out));
}

// ---------------------------------------------------------------------------

namespace {

std::vector<double> binary_values_or_throw(const DataTable& t, const std::string& name,
                                           const char* role) {
  const Column& c = t.column(name);
  if (c.type == ColumnType::kCategorical) {
    throw validation_error(std::string(role) + " '" + name + "' must be binary");
  }
  check_binary(name, c.values);
  return c.values;
}

}  // namespace

AnalysisContext::AnalysisContext(DataTable table, VariableRoles roles)
    : table_(std::move(table)), roles_(std::move(roles)) {
  std::vector<std::pair<std::string, std::string>> used;  // (column, role)
  auto claim = [&](const std::string& col, const std::string& role) {
    if (!table_.has(col)) throw validation_error(role + " column '" + col + "' not in table");
    for (const auto& [c, r] : used) {
      if (c == col) {
        throw validation_error("column '" + col + "' assigned to both " + r + " and " + role);
      }
    }
    used.emplace_back(col, role);
  };
  claim(roles_.treatment, "treatment");
  std::visit(
      [&](const auto& o) {
        using T = std::decay_t<decltype(o)>;
        if constexpr (std::is_same_v<T, SingleOutcome>) {
          claim(o.column, "outcome");
        } else if constexpr (std::is_same_v<T, PrePostOutcome>) {
          claim(o.pre, "pre-outcome");
          claim(o.post, "post-outcome");
        } else {
          claim(o.column, "outcome");
          claim(o.period, "period indicator");
          claim(o.subject, "subject id");
        }
      },
      roles_.outcome);
  for (const auto& c : roles_.x_covars) claim(c, "X covariate");
  for (const auto& c : roles_.z_modifiers) claim(c, "Z modifier");
  for (const auto& c : roles_.v_modifiers) claim(c, "V modifier");

  const auto a = binary_values_or_throw(table_, roles_.treatment, "treatment");
  const double n1 = std::accumulate(a.begin(), a.end(), 0.0);
  if (n1 == 0 || n1 == static_cast<double>(a.size())) {
    throw validation_error("treatment '" + roles_.treatment + "' has a single arm");
  }

  if (const auto* s = std::get_if<SingleOutcome>(&roles_.outcome)) {
    if (table_.column(s->column).type == ColumnType::kCategorical) {
      throw validation_error("outcome '" + s->column + "' must be numeric or binary");
    }
    subjects_ = table_;
    response_ = s->column;
    return;
  }

  if (const auto* pp = std::get_if<PrePostOutcome>(&roles_.outcome)) {
    response_ = pp->response_name;
    period_ = pp->period_name;
    subject_ = pp->subject_name;
    for (const auto& n : {response_, period_, subject_}) {
      if (table_.has(n)) {
        throw validation_error("derived long-form column '" + n + "' clashes with a table column");
      }
    }
    subjects_ = table_;
    const std::size_t n = table_.n_rows();
    std::vector<std::size_t> idx;
    idx.reserve(2 * n);
    for (std::size_t i = 0; i < n; ++i) {
      idx.push_back(i);
      idx.push_back(i);
    }
    DataTable rep = table_.select_rows(idx);
    std::vector<double> y(2 * n), f(2 * n), sid(2 * n);
    const auto& pre = table_.column(pp->pre).values;
    const auto& post = table_.column(pp->post).values;
    for (std::size_t i = 0; i < n; ++i) {
      y[2 * i] = pre[i];
      y[2 * i + 1] = post[i];
      f[2 * i] = 0.0;
      f[2 * i + 1] = 1.0;
      sid[2 * i] = sid[2 * i + 1] = static_cast<double>(i);
    }
    std::vector<Column> cols;
    for (const auto& c : rep.columns()) {
      if (c.name != pp->pre && c.name != pp->post) cols.push_back(c);
    }
    cols.push_back(numeric_column(subject_, std::move(sid)));
    cols.push_back(binary_column(period_, std::move(f)));
    cols.push_back(numeric_column(response_, std::move(y)));
    long_ = DataTable(std::move(cols), subject_);
    long_to_subject_ = std::move(idx);
    return;
  }

  const auto& lo = std::get<LongOutcome>(roles_.outcome);
  response_ = lo.column;
  period_ = lo.period;
  subject_ = lo.subject;
  const auto f = binary_values_or_throw(table_, lo.period, "period indicator");
  const Column& sc = table_.column(lo.subject);
  std::unordered_map<std::string, std::size_t> subject_of;
  std::vector<std::array<int, 2>> counts;
  std::vector<std::size_t> pre_row;
  long_to_subject_.resize(table_.n_rows());
  for (std::size_t i = 0; i < table_.n_rows(); ++i) {
    const std::string key = label_at(sc, i);
    auto [it, fresh] = subject_of.emplace(key, counts.size());
    if (fresh) {
      counts.push_back({0, 0});
      pre_row.push_back(i);
    }
    const int period = f[i] != 0.0 ? 1 : 0;
    ++counts[it->second][period];
    if (period == 0) pre_row[it->second] = i;
    long_to_subject_[i] = it->second;
  }
  for (const auto& [key, s] : subject_of) {
    if (counts[s][0] != 1 || counts[s][1] != 1) {
      throw validation_error("subject '" + key + "' has " +
                             std::to_string(counts[s][0] + counts[s][1]) +
                             " long-form rows; exactly one pre (F=0) and one post (F=1) required");
    }
  }
  subjects_ = table_.select_rows(pre_row);
  long_ = table_;
}

AnalysisContext declare_roles(DataTable table, VariableRoles roles) {
  return AnalysisContext(std::move(table), std::move(roles));
}

// ---------------------------------------------------------------------------

std::string to_string(PopulationKind k) {
  switch (k) {
    case PopulationKind::kFullDataset: return "full_dataset";
    case PopulationKind::kRepresentativeSample: return "representative_sample";
    case PopulationKind::kSummaryStats: return "summary_stats";
  }
  return "?";
}

PopulationKind population_kind_from_string(const std::string& s) {
  if (s == "full_dataset") return PopulationKind::kFullDataset;
  if (s == "representative_sample") return PopulationKind::kRepresentativeSample;
  if (s == "summary_stats") return PopulationKind::kSummaryStats;
  throw usage_error("unknown population kind '" + s +
                    "' (full_dataset|representative_sample|summary_stats)");
}

void validate(const SummaryStats& stats) {
  for (const auto& [k, m] : stats.z_means) {
    if (m.lo.has_value() != m.hi.has_value()) {
      throw validation_error("z_means." + k + ": give both confidence limits or neither");
    }
    if (m.has_interval() && !(*m.lo <= m.point && m.point <= *m.hi)) {
      throw validation_error("z_means." + k + ": confidence limits do not bracket the point");
    }
  }
  if (stats.joint_cells) {
    const auto& jc = *stats.joint_cells;
    if (jc.columns.empty()) throw validation_error("joint_cells: no columns declared");
    double total = 0;
    for (const auto& [cell, p] : jc.probability) {
      if (cell.size() != jc.columns.size()) {
        throw validation_error("joint_cells: cell arity does not match columns");
      }
      if (!(p >= 0)) throw validation_error("joint_cells: negative probability");
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) {
      throw validation_error("joint_cells: probabilities sum to " + format_number(total) +
                             ", not 1");
    }
  }
}

SummaryStats parse_summary_stats(const std::string& text) {
  SummaryStats out;
  std::istringstream in(text);
  std::string line;
  bool in_cells = false;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& why) {
    return validation_error("summary stats line " + std::to_string(line_no) + ": " + why);
  };
  auto split_list = [](const std::string& s) {
    std::vector<std::string> parts;
    std::stringstream ss(s);
    std::string p;
    while (std::getline(ss, p, ',')) parts.push_back(trim(p));
    return parts;
  };
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    std::string s = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (s.empty()) continue;
    if (s == "[joint_cells]") {
      in_cells = true;
      out.joint_cells.emplace();
      continue;
    }
    const auto eq = s.rfind('=');
    if (eq == std::string::npos) throw fail("expected 'key = value'");
    const std::string key = trim(s.substr(0, eq));
    const std::string val = trim(s.substr(eq + 1));
    if (in_cells) {
      if (key == "columns") {
        out.joint_cells->columns = split_list(val);
        continue;
      }
      auto p = parse_double(val);
      if (!p) throw fail("bad probability '" + val + "'");
      auto cell = split_list(key);
      if (!out.joint_cells->probability.emplace(cell, *p).second) throw fail("duplicate cell");
      continue;
    }
    if (key.rfind("z_means.", 0) != 0) throw fail("unknown key '" + key + "'");
    if (val.size() < 2 || val.front() != '[' || val.back() != ']') {
      throw fail("expected [point] or [point, lo, hi]");
    }
    auto parts = split_list(val.substr(1, val.size() - 2));
    std::vector<double> nums;
    for (const auto& p : parts) {
      auto d = parse_double(p);
      if (!d) throw fail("bad number '" + p + "'");
      nums.push_back(*d);
    }
    MeanEstimate m;
    if (nums.size() == 1) {
      m.point = nums[0];
    } else if (nums.size() == 3) {
      m.point = nums[0];
      m.lo = nums[1];
      m.hi = nums[2];
    } else {
      throw fail("expected 1 or 3 numbers");
    }
    out.z_means[key.substr(8)] = m;
  }
  validate(out);
  return out;
}

SummaryStats load_summary_stats(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_summary_stats(ss.str());
}

PopulationTarget PopulationTarget::full_dataset(DataTable data, bool trial_identifiable,
                                                std::optional<std::string> membership_column) {
  PopulationTarget p;
  p.kind_ = PopulationKind::kFullDataset;
  if (membership_column && !data.has(*membership_column)) {
    throw validation_error("membership column '" + *membership_column + "' not in population");
  }
  p.data_ = std::move(data);
  p.trial_identifiable_ = trial_identifiable;
  p.membership_ = std::move(membership_column);
  return p;
}

PopulationTarget PopulationTarget::representative_sample(
    DataTable data, bool trial_identifiable, std::optional<std::string> membership_column) {
  PopulationTarget p = full_dataset(std::move(data), trial_identifiable, std::move(membership_column));
  p.kind_ = PopulationKind::kRepresentativeSample;
  return p;
}

PopulationTarget PopulationTarget::summary(SummaryStats stats) {
  validate(stats);
  PopulationTarget p;
  p.kind_ = PopulationKind::kSummaryStats;
  p.data_ = std::move(stats);
  return p;
}

const DataTable& PopulationTarget::dataset() const {
  if (!has_dataset()) throw validation_error("population is summary statistics, not a dataset");
  return std::get<DataTable>(data_);
}

const SummaryStats& PopulationTarget::stats() const {
  if (has_dataset()) throw validation_error("population is a dataset, not summary statistics");
  return std::get<SummaryStats>(data_);
}

std::vector<double> key_values(const DataTable& table, const std::string& key) {
  const auto eq = key.find('=');
  if (eq == std::string::npos) {
    const Column& c = table.column(key);
    if (c.type == ColumnType::kCategorical) {
      throw validation_error("categorical column '" + key + "' needs a level: use '" + key +
                             "=<level>'");
    }
    return c.values;
  }
  const Column& c = table.column(key.substr(0, eq));
  const std::string level = key.substr(eq + 1);
  std::vector<double> out(c.size());
  if (c.type == ColumnType::kCategorical) {
    auto idx = c.level_index(level);
    if (!idx) throw validation_error("'" + level + "' is not a level of '" + c.name + "'");
    for (std::size_t i = 0; i < c.size(); ++i) out[i] = c.values[i] == double(*idx) ? 1.0 : 0.0;
  } else {
    auto v = parse_double(level);
    if (!v) throw validation_error("bad level '" + level + "' for column '" + c.name + "'");
    for (std::size_t i = 0; i < c.size(); ++i) out[i] = c.values[i] == *v ? 1.0 : 0.0;
  }
  return out;
}

MeanEstimate PopulationTarget::mean(const std::string& key, double ci_level) const {
  if (has_dataset()) {
    const auto v = key_values(dataset(), key);
    const double n = static_cast<double>(v.size());
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / n;
    MeanEstimate out{m, {}, {}};
    if (kind_ == PopulationKind::kRepresentativeSample && v.size() > 1) {
      double ss = 0;
      for (double x : v) ss += (x - m) * (x - m);
      const double se = std::sqrt(ss / (n - 1) / n);
      const double q = boost::math::quantile(boost::math::normal(), 0.5 + ci_level / 2);
      out.lo = m - q * se;
      out.hi = m + q * se;
    }
    return out;
  }
  const auto& st = stats();
  if (auto it = st.z_means.find(key); it != st.z_means.end()) return it->second;
  const auto eq = key.find('=');
  if (st.joint_cells && eq != std::string::npos) {
    const auto& jc = *st.joint_cells;
    auto col = std::find(jc.columns.begin(), jc.columns.end(), key.substr(0, eq));
    if (col != jc.columns.end()) {
      const auto j = static_cast<std::size_t>(col - jc.columns.begin());
      double p = 0;
      for (const auto& [cell, pr] : jc.probability) {
        if (cell[j] == key.substr(eq + 1)) p += pr;
      }
      return MeanEstimate{p, {}, {}};
    }
  }
  throw validation_error("population summary has no mean for '" + key + "'");
}

// ---------------------------------------------------------------------------

namespace {

ModifierCoverage cover_dataset(const Column& t, const Column& p) {
  ModifierCoverage m;
  m.column = t.name;
  m.checked = true;
  if (t.type == ColumnType::kNumeric) {
    if (p.type == ColumnType::kCategorical) {
      throw validation_error("modifier '" + t.name + "' is numeric in trial, categorical in population");
    }
    auto [tmin, tmax] = std::minmax_element(t.values.begin(), t.values.end());
    auto [pmin, pmax] = std::minmax_element(p.values.begin(), p.values.end());
    m.trial_min = *tmin;
    m.trial_max = *tmax;
    m.pop_min = *pmin;
    m.pop_max = *pmax;
    m.covered = m.pop_min >= m.trial_min && m.pop_max <= m.trial_max;
    std::ostringstream os;
    os << "trial range " << m.trial_min << " to " << m.trial_max << ", population range "
       << m.pop_min << " to " << m.pop_max;
    m.detail = os.str();
    return m;
  }
  std::set<std::string> trial_levels;
  for (std::size_t i = 0; i < t.size(); ++i) trial_levels.insert(label_at(t, i));
  std::set<std::string> pop_levels;
  for (std::size_t i = 0; i < p.size(); ++i) pop_levels.insert(label_at(p, i));
  for (const auto& l : pop_levels) {
    if (!trial_levels.count(l)) m.uncovered_levels.push_back(l);
  }
  m.covered = m.uncovered_levels.empty();
  m.detail = m.covered ? "all population levels present in trial"
                       : std::to_string(m.uncovered_levels.size()) +
                             " population level(s) absent from trial";
  return m;
}

}  // namespace

CoverageReport check_modifier_coverage(const DataTable& trial, const PopulationTarget& pop,
                                       std::span<const std::string> modifiers) {
  CoverageReport r;
  for (const auto& name : modifiers) {
    const Column& t = trial.column(name);
    ModifierCoverage m;
    if (pop.has_dataset()) {
      if (!pop.dataset().has(name)) {
        throw validation_error("modifier '" + name + "' absent from population data");
      }
      m = cover_dataset(t, pop.dataset().column(name));
    } else {
      const auto& st = pop.stats();
      const JointCells* jc = st.joint_cells ? &*st.joint_cells : nullptr;
      auto col = jc ? std::find(jc->columns.begin(), jc->columns.end(), name)
                    : std::vector<std::string>::const_iterator{};
      if (jc && col != jc->columns.end()) {
        const auto j = static_cast<std::size_t>(col - jc->columns.begin());
        std::set<std::string> trial_levels;
        for (std::size_t i = 0; i < t.size(); ++i) trial_levels.insert(label_at(t, i));
        m.column = name;
        m.checked = true;
        std::set<std::string> missing;
        for (const auto& [cell, p] : jc->probability) {
          if (p > 0 && !trial_levels.count(cell[j])) missing.insert(cell[j]);
        }
        m.uncovered_levels.assign(missing.begin(), missing.end());
        m.covered = missing.empty();
        m.detail = m.covered ? "all population levels present in trial"
                             : "population levels with positive probability absent from trial";
      } else {
        const bool has_mean = std::any_of(st.z_means.begin(), st.z_means.end(), [&](const auto& kv) {
          return kv.first == name || kv.first.rfind(name + "=", 0) == 0;
        });
        if (!has_mean) {
          throw validation_error("modifier '" + name + "' absent from population summary");
        }
        m.column = name;
        m.checked = false;
        m.detail = "only a mean is available; support cannot be compared";
        r.notes.push_back("coverage of '" + name + "' not checkable from summary means");
      }
    }
    if (!m.covered) {
      r.flags.push_back("'" + name + "' not covered by trial: " + m.detail);
    }
    r.items.push_back(std::move(m));
  }
  return r;
}

CoverageReport check_modifier_coverage(const AnalysisContext& ctx, const PopulationTarget& pop) {
  CoverageReport r = check_modifier_coverage(ctx.subject_table(), pop, ctx.roles().z_modifiers);
  for (const auto& v : ctx.roles().v_modifiers) {
    r.notes.push_back("'" + v +
                      "' is not observed in the target population; its coverage cannot be checked");
  }
  return r;
}

DataTable trim_to_coverage(const DataTable& population, const DataTable& trial,
                           std::span<const std::string> modifiers) {
  std::vector<std::size_t> keep;
  std::vector<std::function<bool(std::size_t)>> inside;
  for (const auto& name : modifiers) {
    const Column& t = trial.column(name);
    const Column& p = population.column(name);
    if (t.type == ColumnType::kNumeric) {
      auto [lo, hi] = std::minmax_element(t.values.begin(), t.values.end());
      const double a = *lo, b = *hi;
      inside.push_back([&p, a, b](std::size_t i) { return p.values[i] >= a && p.values[i] <= b; });
    } else {
      auto levels = std::make_shared<std::set<std::string>>();
      for (std::size_t i = 0; i < t.size(); ++i) levels->insert(label_at(t, i));
      inside.push_back([&p, levels](std::size_t i) { return levels->count(label_at(p, i)) > 0; });
    }
  }
  for (std::size_t i = 0; i < population.n_rows(); ++i) {
    if (std::all_of(inside.begin(), inside.end(), [i](const auto& f) { return f(i); })) {
      keep.push_back(i);
    }
  }
  return population.select_rows(keep);
}

}  // namespace tatesens
