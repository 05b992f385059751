#include "tatesens/design.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "tatesens/error.hpp"

namespace tatesens {

std::string to_string(Link l) {
  switch (l) {
    case Link::kIdentity: return "identity";
    case Link::kLogit: return "logit";
    case Link::kLog: return "log";
  }
  return "?";
}

std::string to_string(Family f) {
  switch (f) {
    case Family::kGaussian: return "gaussian";
    case Family::kBinomial: return "binomial";
    case Family::kPoisson: return "poisson";
  }
  return "?";
}

Link link_from_string(const std::string& s) {
  if (s == "identity") return Link::kIdentity;
  if (s == "logit") return Link::kLogit;
  if (s == "log") return Link::kLog;
  throw usage_error("unknown link '" + s + "' (identity|logit|log)");
}

Family family_from_string(const std::string& s) {
  if (s == "gaussian") return Family::kGaussian;
  if (s == "binomial") return Family::kBinomial;
  if (s == "poisson") return Family::kPoisson;
  throw usage_error("unknown family '" + s + "' (gaussian|binomial|poisson)");
}

std::string Term::label() const {
  std::string out;
  for (std::size_t i = 0; i < columns.size(); ++i) out += (i ? ":" : "") + columns[i];
  return out;
}

Term Term::parse(const std::string& label) {
  Term t;
  std::stringstream ss(label);
  std::string part;
  while (std::getline(ss, part, ':')) {
    if (part.empty()) throw usage_error("malformed term '" + label + "'");
    t.columns.push_back(part);
  }
  if (t.columns.empty()) throw usage_error("empty term");
  return t;
}

const std::string& Design::term_of(std::size_t j) const {
  for (const auto& t : terms) {
    if (j >= t.first && j < t.first + t.count) return t.label;
  }
  static const std::string intercept = kInterceptName;
  return intercept;
}

namespace {

struct Expansion {
  std::vector<std::string> names;
  std::vector<std::vector<double>> cols;
};

Expansion expand_column(const Column& c) {
  Expansion e;
  if (c.type != ColumnType::kCategorical) {
    e.names.push_back(c.name);
    e.cols.push_back(c.values);
    return e;
  }
  for (std::size_t l = 0; l < c.levels.size(); ++l) {
    if (l == c.reference) continue;
    e.names.push_back(c.name + "[" + c.levels[l] + "]");
    std::vector<double> ind(c.size());
    for (std::size_t i = 0; i < c.size(); ++i) ind[i] = c.values[i] == double(l) ? 1.0 : 0.0;
    e.cols.push_back(std::move(ind));
  }
  return e;
}

}  // namespace

Design expand_terms(const DataTable& table, const std::vector<Term>& terms, bool intercept) {
  const std::size_t n = table.n_rows();
  std::vector<std::string> names;
  std::vector<std::vector<double>> cols;
  std::vector<TermSpan> spans;
  if (intercept) {
    names.emplace_back(kInterceptName);
    cols.emplace_back(n, 1.0);
  }
  for (const auto& term : terms) {
    if (term.columns.empty()) throw usage_error("empty term in model");
    Expansion acc = expand_column(table.column(term.columns.front()));
    for (std::size_t k = 1; k < term.columns.size(); ++k) {
      Expansion next = expand_column(table.column(term.columns[k]));
      Expansion prod;
      for (std::size_t a = 0; a < acc.names.size(); ++a) {
        for (std::size_t b = 0; b < next.names.size(); ++b) {
          prod.names.push_back(acc.names[a] + ":" + next.names[b]);
          std::vector<double> v(n);
          for (std::size_t i = 0; i < n; ++i) v[i] = acc.cols[a][i] * next.cols[b][i];
          prod.cols.push_back(std::move(v));
        }
      }
      acc = std::move(prod);
    }
    spans.push_back(TermSpan{term.label(), names.size(), acc.names.size()});
    for (std::size_t j = 0; j < acc.names.size(); ++j) {
      names.push_back(std::move(acc.names[j]));
      cols.push_back(std::move(acc.cols[j]));
    }
  }
  std::set<std::string> unique(names.begin(), names.end());
  if (unique.size() != names.size()) {
    throw fit_error("rank-deficient design: a term is listed more than once");
  }

  Design d;
  d.x.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) {
    for (std::size_t i = 0; i < n; ++i) {
      d.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = cols[j][i];
    }
  }
  d.names = std::move(names);
  d.terms = std::move(spans);
  return d;
}

void check_full_rank(const Design& d) {
  if (d.x.rows() < d.x.cols()) {
    throw fit_error("rank-deficient design: " + std::to_string(d.x.rows()) + " rows for " +
                    std::to_string(d.x.cols()) + " columns");
  }
  // Scale columns so the rank threshold is not driven by units.
  Eigen::MatrixXd xs = d.x;
  for (Eigen::Index j = 0; j < xs.cols(); ++j) {
    const double norm = xs.col(j).norm();
    if (norm > 0) xs.col(j) /= norm;
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(xs);
  qr.setThreshold(1e-10);
  const auto rank = qr.rank();
  if (rank == xs.cols()) return;
  std::set<std::string> offending;
  const auto& perm = qr.colsPermutation().indices();
  for (Eigen::Index k = rank; k < xs.cols(); ++k) {
    const auto j = static_cast<std::size_t>(perm(k));
    offending.insert(d.term_of(j) + " (" + d.names[j] + ")");
  }
  std::string list;
  for (const auto& s : offending) list += (list.empty() ? "" : ", ") + s;
  throw fit_error("rank-deficient design: collinear column(s) " + list);
}

Design build_design(const DataTable& table, const ModelSpec& spec) {
  Design d = expand_terms(table, spec.terms, spec.intercept);
  if (!spec.response.empty()) {
    const Column& y = table.column(spec.response);
    if (y.type == ColumnType::kCategorical) {
      throw fit_error("response '" + spec.response + "' is categorical");
    }
    d.y = Eigen::Map<const Eigen::VectorXd>(y.values.data(), static_cast<Eigen::Index>(y.size()));
  }
  check_full_rank(d);
  return d;
}

}  // namespace tatesens
