#include "tatesens/estimation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "tatesens/error.hpp"

namespace tatesens {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

std::string to_string(VcovKind k) {
  switch (k) {
    case VcovKind::kModelBased: return "model_based";
    case VcovKind::kSandwich: return "sandwich";
    case VcovKind::kClusterSandwich: return "cluster_sandwich";
  }
  return "?";
}

VcovKind vcov_kind_from_string(const std::string& s) {
  if (s == "model_based") return VcovKind::kModelBased;
  if (s == "sandwich") return VcovKind::kSandwich;
  if (s == "cluster_sandwich") return VcovKind::kClusterSandwich;
  throw usage_error("unknown vcov kind '" + s + "' (model_based|sandwich|cluster_sandwich)");
}

std::string fmt6(double v) {
  if (std::isnan(v)) return "NA";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::optional<std::size_t> FittedModel::index_of(const std::string& name) const {
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) return std::nullopt;
  return static_cast<std::size_t>(it - names.begin());
}

double FittedModel::coefficient(const std::string& name) const {
  auto i = index_of(name);
  if (!i) throw Error(ErrorCategory::kValidation, "estimation", "unknown coefficient '" + name + "'");
  return coef(static_cast<Index>(*i));
}

double FittedModel::std_error(const std::string& name) const {
  auto i = index_of(name);
  if (!i) throw Error(ErrorCategory::kValidation, "estimation", "unknown coefficient '" + name + "'");
  const auto k = static_cast<Index>(*i);
  return std::sqrt(std::max(0.0, vcov(k, k)));
}

namespace {

VectorXd checked_weights(std::span<const double> weights, std::size_t n, bool* used) {
  *used = !weights.empty();
  if (weights.empty()) return VectorXd::Ones(static_cast<Index>(n));
  if (weights.size() != n) {
    throw fit_error("weight vector has " + std::to_string(weights.size()) + " entries for " +
                    std::to_string(n) + " rows");
  }
  VectorXd w(static_cast<Index>(n));
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(weights[i] >= 0) || !std::isfinite(weights[i])) {
      throw fit_error("negative or non-finite weight at row " + std::to_string(i));
    }
    w(static_cast<Index>(i)) = weights[i];
    total += weights[i];
  }
  if (total <= 0) throw fit_error("all weights are zero");
  return w;
}

MatrixXd symmetric_inverse(const MatrixXd& a, const char* what) {
  Eigen::LDLT<MatrixXd> ldlt(a);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
    throw fit_error(std::string("singular ") + what);
  }
  MatrixXd inv = ldlt.solve(MatrixXd::Identity(a.rows(), a.cols()));
  return (inv + inv.transpose()) / 2.0;
}

// bread * meat * bread with the small-sample factor applied.
MatrixXd sandwich(const MatrixXd& bread, const MatrixXd& scores, double factor) {
  MatrixXd meat = scores.transpose() * scores;
  MatrixXd v = factor * bread * meat * bread;
  return (v + v.transpose()) / 2.0;
}

MatrixXd cluster_scores(const MatrixXd& scores, const std::vector<std::size_t>& clusters,
                        std::size_t* n_clusters) {
  if (clusters.size() != static_cast<std::size_t>(scores.rows())) {
    throw fit_error("cluster-sandwich variance needs one cluster label per row");
  }
  const std::size_t g = clusters.empty() ? 0 : *std::max_element(clusters.begin(), clusters.end()) + 1;
  MatrixXd sums = MatrixXd::Zero(static_cast<Index>(g), scores.cols());
  for (Index i = 0; i < scores.rows(); ++i) sums.row(static_cast<Index>(clusters[i])) += scores.row(i);
  std::size_t nonempty = 0;
  for (Index k = 0; k < sums.rows(); ++k) nonempty += sums.row(k).squaredNorm() > 0 ? 1 : 0;
  *n_clusters = std::max<std::size_t>(nonempty, 2);
  return sums;
}

VcovKind resolve_kind(const FitOptions& o, bool weighted) {
  if (o.vcov) return *o.vcov;
  return weighted ? VcovKind::kSandwich : VcovKind::kModelBased;
}

}  // namespace

FittedModel fit_wls(const Design& design, std::span<const double> weights,
                    const FitOptions& options) {
  const std::size_t n = design.rows();
  const std::size_t p = design.cols();
  if (static_cast<std::size_t>(design.y.size()) != n) throw fit_error("design has no response");
  bool weighted = false;
  const VectorXd w = checked_weights(weights, n, &weighted);
  const std::size_t n_pos = static_cast<std::size_t>((w.array() > 0).count());
  if (n_pos <= p) {
    throw fit_error("need more observations (" + std::to_string(n_pos) + ") than coefficients (" +
                    std::to_string(p) + ")");
  }

  const VectorXd sw = w.cwiseSqrt();
  const MatrixXd xw = sw.asDiagonal() * design.x;
  const VectorXd yw = sw.cwiseProduct(design.y);
  Eigen::ColPivHouseholderQR<MatrixXd> qr(xw);
  if (qr.rank() < static_cast<Index>(p)) throw fit_error("singular normal equations");
  const VectorXd beta = qr.solve(yw);
  const VectorXd fitted = design.x * beta;
  const VectorXd resid = design.y - fitted;
  const MatrixXd xtwx_inv = symmetric_inverse(xw.transpose() * xw, "normal equations");

  FittedModel m;
  m.names = design.names;
  m.terms = design.terms;
  m.coef = beta;
  m.link = Link::kIdentity;
  m.family = Family::kGaussian;
  m.n_obs = n_pos;
  m.weights_used = weighted;
  m.fitted = fitted;
  m.deviance = (w.array() * resid.array().square()).sum();
  m.convergence = Convergence{1, 0.0, true, {m.deviance}, false};
  m.vcov_kind = resolve_kind(options, weighted);

  const double dn = static_cast<double>(n_pos);
  const double dp = static_cast<double>(p);
  switch (m.vcov_kind) {
    case VcovKind::kModelBased: {
      const double sigma2 = m.deviance / (dn - dp);
      m.vcov = sigma2 * xtwx_inv;
      if (!weighted) m.df = dn - dp;
      break;
    }
    case VcovKind::kSandwich: {
      const MatrixXd scores = (w.array() * resid.array()).matrix().asDiagonal() * design.x;
      m.vcov = sandwich(xtwx_inv, scores, dn / (dn - dp));
      break;
    }
    case VcovKind::kClusterSandwich: {
      const MatrixXd scores = (w.array() * resid.array()).matrix().asDiagonal() * design.x;
      std::size_t g = 0;
      const MatrixXd cs = cluster_scores(scores, options.clusters, &g);
      const double dg = static_cast<double>(g);
      m.vcov = sandwich(xtwx_inv, cs, dg / (dg - 1) * (dn - 1) / (dn - dp));
      break;
    }
  }
  return m;
}

namespace {

struct GlmFamily {
  Link link;
  Family family;

  double linkinv(double eta) const {
    if (link == Link::kLogit) return 1.0 / (1.0 + std::exp(-eta));
    return std::exp(eta);
  }
  double dmu_deta(double mu) const { return link == Link::kLogit ? mu * (1 - mu) : mu; }
  double variance(double mu) const { return family == Family::kBinomial ? mu * (1 - mu) : mu; }

  static double ylogy(double y, double mu) { return y > 0 ? y * std::log(y / mu) : 0.0; }

  double deviance(const VectorXd& y, const VectorXd& mu, const VectorXd& w) const {
    double d = 0;
    for (Index i = 0; i < y.size(); ++i) {
      if (family == Family::kBinomial) {
        d += w(i) * (ylogy(y(i), mu(i)) + ylogy(1 - y(i), 1 - mu(i)));
      } else {
        d += w(i) * (ylogy(y(i), mu(i)) - (y(i) - mu(i)));
      }
    }
    return 2 * d;
  }
};

constexpr double kLogBinomialCap = 1.0 - 1e-10;

}  // namespace

FittedModel fit_glm_irls(const Design& design, Link link, Family family,
                         std::span<const double> weights, const FitOptions& options) {
  const std::size_t n = design.rows();
  const std::size_t p = design.cols();
  if (static_cast<std::size_t>(design.y.size()) != n) throw fit_error("design has no response");
  const bool valid_pair = (link == Link::kLogit && family == Family::kBinomial) ||
                          (link == Link::kLog &&
                           (family == Family::kPoisson || family == Family::kBinomial));
  if (!valid_pair) {
    throw fit_error("unsupported link/family: " + to_string(link) + "/" + to_string(family));
  }
  const VectorXd& y = design.y;
  for (Index i = 0; i < y.size(); ++i) {
    const double v = y(i);
    if (family == Family::kBinomial && v != 0.0 && v != 1.0) {
      throw fit_error("binomial response must be 0/1");
    }
    if (family == Family::kPoisson && (v < 0 || v != std::floor(v))) {
      throw fit_error("poisson response must be a nonnegative integer");
    }
  }
  bool weighted = false;
  const VectorXd w = checked_weights(weights, n, &weighted);
  const std::size_t n_pos = static_cast<std::size_t>((w.array() > 0).count());
  if (n_pos <= p) throw fit_error("need more observations than coefficients");

  const GlmFamily fam{link, family};
  const bool log_binomial = link == Link::kLog && family == Family::kBinomial;
  const double ybar = (w.array() * y.array()).sum() / w.sum();

  auto mean_of = [&](const VectorXd& beta, bool* valid) {
    VectorXd eta = design.x * beta;
    VectorXd mu(eta.size());
    *valid = true;
    for (Index i = 0; i < eta.size(); ++i) {
      mu(i) = fam.linkinv(eta(i));
      if (!std::isfinite(mu(i))) *valid = false;
      if (log_binomial && mu(i) > kLogBinomialCap) *valid = false;
      if (family == Family::kBinomial) {
        mu(i) = std::clamp(mu(i), 1e-300, 1.0 - 1e-16);
      } else {
        mu(i) = std::max(mu(i), 1e-300);
      }
    }
    return mu;
  };

  // Start from the intercept-only solution when an intercept exists, else zero.
  VectorXd beta = VectorXd::Zero(static_cast<Index>(p));
  const bool has_intercept = !design.names.empty() && design.names.front() == kInterceptName;
  if (has_intercept) {
    const double m0 = std::clamp(ybar, 1e-6, 1 - 1e-6);
    beta(0) = link == Link::kLogit ? std::log(m0 / (1 - m0))
                                   : std::log(family == Family::kPoisson ? std::max(ybar, 1e-6) : m0);
  } else if (log_binomial) {
    throw fit_error("log-binomial model requires an intercept");
  }

  bool valid = false;
  VectorXd mu = mean_of(beta, &valid);
  if (!valid) throw fit_error("invalid starting values");
  double dev = fam.deviance(y, mu, w);

  FittedModel m;
  m.convergence.deviance_trace.push_back(dev);
  m.convergence.converged = false;
  MatrixXd xtwx;
  for (int iter = 1; iter <= options.max_iterations; ++iter) {
    VectorXd wz(static_cast<Index>(n));
    VectorXd z(static_cast<Index>(n));
    const VectorXd eta = design.x * beta;
    for (Index i = 0; i < static_cast<Index>(n); ++i) {
      const double d = fam.dmu_deta(mu(i));
      wz(i) = w(i) * d * d / fam.variance(mu(i));
      z(i) = eta(i) + (y(i) - mu(i)) / d;
    }
    const VectorXd sw = wz.cwiseSqrt();
    Eigen::ColPivHouseholderQR<MatrixXd> qr(sw.asDiagonal() * design.x);
    if (qr.rank() < static_cast<Index>(p)) throw fit_error("singular IRLS weighted normal equations");
    VectorXd proposal = qr.solve(sw.cwiseProduct(z));

    // Step-halving until the mean is admissible and the deviance does not grow.
    VectorXd mu_new;
    double dev_new = std::numeric_limits<double>::infinity();
    bool accepted = false;
    for (int half = 0; half < 60; ++half) {
      bool ok = false;
      mu_new = mean_of(proposal, &ok);
      if (ok) {
        dev_new = fam.deviance(y, mu_new, w);
        if (dev_new <= dev * (1 + 1e-12) + 1e-12) {
          accepted = true;
          break;
        }
      }
      proposal = (beta + proposal) / 2.0;
    }
    if (!accepted) {
      // No admissible improving step: the current iterate is the optimum
      // reachable on the parameter space.
      m.convergence.converged = true;
      m.convergence.iterations = iter;
      break;
    }
    for (Index j = 0; j < proposal.size(); ++j) {
      if (std::abs(proposal(j)) > options.separation_threshold) {
        throw fit_error("complete or quasi-complete separation: coefficient of " +
                        design.names[static_cast<std::size_t>(j)] + " (term " +
                        design.term_of(static_cast<std::size_t>(j)) + ") diverges");
      }
    }
    const double crit = std::abs(dev_new - dev) / (std::abs(dev_new) + 0.1);
    beta = proposal;
    mu = mu_new;
    dev = dev_new;
    m.convergence.deviance_trace.push_back(dev);
    m.convergence.iterations = iter;
    m.convergence.criterion = crit;
    if (crit < options.tolerance) {
      m.convergence.converged = true;
      break;
    }
  }
  if (!m.convergence.converged) {
    throw fit_error("IRLS did not converge in " + std::to_string(options.max_iterations) +
                    " iterations");
  }

  VectorXd wz(static_cast<Index>(n));
  VectorXd score_w(static_cast<Index>(n));
  for (Index i = 0; i < static_cast<Index>(n); ++i) {
    const double d = fam.dmu_deta(mu(i));
    const double v = fam.variance(mu(i));
    wz(i) = w(i) * d * d / v;
    score_w(i) = w(i) * (y(i) - mu(i)) * d / v;
  }
  const MatrixXd bread =
      symmetric_inverse(design.x.transpose() * wz.asDiagonal() * design.x, "information matrix");

  m.names = design.names;
  m.terms = design.terms;
  m.coef = beta;
  m.link = link;
  m.family = family;
  m.n_obs = n_pos;
  m.weights_used = weighted;
  m.fitted = mu;
  m.deviance = dev;
  if (log_binomial) m.convergence.near_boundary = mu.maxCoeff() > 1.0 - 1e-6;
  m.vcov_kind = resolve_kind(options, weighted);
  const double dn = static_cast<double>(n_pos);
  const double dp = static_cast<double>(design.cols());
  switch (m.vcov_kind) {
    case VcovKind::kModelBased:
      m.vcov = bread;
      break;
    case VcovKind::kSandwich: {
      const MatrixXd scores = score_w.asDiagonal() * design.x;
      m.vcov = sandwich(bread, scores, dn / (dn - dp));
      break;
    }
    case VcovKind::kClusterSandwich: {
      const MatrixXd scores = score_w.asDiagonal() * design.x;
      std::size_t g = 0;
      const MatrixXd cs = cluster_scores(scores, options.clusters, &g);
      const double dg = static_cast<double>(g);
      m.vcov = sandwich(bread, cs, dg / (dg - 1));
      break;
    }
  }
  return m;
}

FittedModel fit_model(const DataTable& table, const ModelSpec& spec, std::span<const double> weights,
                      const FitOptions& options) {
  const Design d = build_design(table, spec);
  if (spec.link == Link::kIdentity) {
    if (spec.family != Family::kGaussian) throw fit_error("identity link requires gaussian family");
    return fit_wls(d, weights, options);
  }
  return fit_glm_irls(d, spec.link, spec.family, weights, options);
}

double critical_value(std::optional<double> df, double ci_level) {
  if (!(ci_level > 0 && ci_level < 1)) throw usage_error("confidence level must lie in (0,1)");
  const double p = 0.5 + ci_level / 2;
  if (df) return boost::math::quantile(boost::math::students_t(*df), p);
  return boost::math::quantile(boost::math::normal(), p);
}

LinComResult lincom(const FittedModel& model, const Combination& combo, double ci_level) {
  VectorXd c = VectorXd::Zero(model.coef.size());
  for (const auto& [name, weight] : combo) {
    auto i = model.index_of(name);
    if (!i) {
      throw Error(ErrorCategory::kValidation, "estimation",
                  "lincom: unknown coefficient '" + name + "'");
    }
    c(static_cast<Index>(*i)) += weight;
  }
  LinComResult r;
  r.estimate = c.dot(model.coef);
  r.std_error = std::sqrt(std::max(0.0, c.dot(model.vcov * c)));
  const double q = critical_value(model.df, ci_level);
  r.lower = r.estimate - q * r.std_error;
  r.upper = r.estimate + q * r.std_error;
  return r;
}

std::string coefficient_report(const FittedModel& model, const std::string& title, double ci_level) {
  std::ostringstream os;
  const bool t_based = model.df.has_value();
  const double q = critical_value(model.df, ci_level);
  os << title << "\n";
  char line[512];
  std::snprintf(line, sizeof line, "%-40s %14s %14s", "", "Estimate", "Std. Error");
  os << line;
  if (t_based) os << " " << std::string(8, ' ') << "df";
  std::snprintf(line, sizeof line, " %12s %14s %14s\n", t_based ? "t value" : "z value", "Lower CL",
                "Upper CL");
  os << line;
  for (std::size_t j = 0; j < model.names.size(); ++j) {
    const auto k = static_cast<Index>(j);
    const double est = model.coef(k);
    const double se = std::sqrt(std::max(0.0, model.vcov(k, k)));
    std::snprintf(line, sizeof line, "%-40s %14s %14s", model.names[j].c_str(), fmt6(est).c_str(),
                  fmt6(se).c_str());
    os << line;
    if (t_based) {
      std::snprintf(line, sizeof line, " %9s", fmt6(*model.df).c_str());
      os << line;
    }
    std::snprintf(line, sizeof line, " %12s %14s %14s\n", fmt6(se > 0 ? est / se : NAN).c_str(),
                  fmt6(est - q * se).c_str(), fmt6(est + q * se).c_str());
    os << line;
  }
  os << "link: " << to_string(model.link) << "  family: " << to_string(model.family)
     << "  n: " << model.n_obs << "  weighted: " << (model.weights_used ? "yes" : "no")
     << "  vcov: " << to_string(model.vcov_kind) << "\n";
  os << "iterations: " << model.convergence.iterations
     << "  criterion: " << fmt6(model.convergence.criterion)
     << "  converged: " << (model.convergence.converged ? "yes" : "no");
  if (model.convergence.near_boundary) os << "  WARNING: fitted probability near 1";
  os << "\n";
  return os.str();
}

}  // namespace tatesens
