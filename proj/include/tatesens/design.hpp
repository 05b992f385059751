#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tatesens/data.hpp"

namespace tatesens {

enum class Link { kIdentity, kLogit, kLog };
enum class Family { kGaussian, kBinomial, kPoisson };

std::string to_string(Link l);
std::string to_string(Family f);
Link link_from_string(const std::string& s);
Family family_from_string(const std::string& s);

// A main effect (one column) or an interaction (several). Hierarchy is not
// enforced: an interaction may appear without its main effects.
struct Term {
  std::vector<std::string> columns;

  std::string label() const;  // columns joined by ':'
  static Term parse(const std::string& label);
};

struct ModelSpec {
  std::string response;
  Link link = Link::kIdentity;
  Family family = Family::kGaussian;
  std::vector<Term> terms;
  bool intercept = true;
};

struct TermSpan {
  std::string label;
  std::size_t first = 0;
  std::size_t count = 0;
};

struct Design {
  Eigen::MatrixXd x;
  Eigen::VectorXd y;  // empty when the spec has no response
  std::vector<std::string> names;
  std::vector<TermSpan> terms;

  std::size_t rows() const { return static_cast<std::size_t>(x.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(x.cols()); }
  // Label of the term owning design column j.
  const std::string& term_of(std::size_t j) const;
};

inline constexpr const char* kInterceptName = "(Intercept)";

// Intercept first, then each term's expanded columns in order. Categorical
// columns become indicators of every non-reference level ("col[level]");
// interactions multiply the expansions of their columns. Throws a fit error
// naming the offending terms if the matrix is rank deficient.
Design build_design(const DataTable& table, const ModelSpec& spec);

// Same as build_design but without the rank check and response.
Design expand_terms(const DataTable& table, const std::vector<Term>& terms, bool intercept);

// Throws if x has deficient column rank; names the aliased terms.
void check_full_rank(const Design& d);

}  // namespace tatesens
