#include "tatesens/mixed.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include <boost/math/tools/minima.hpp>

#include "tatesens/error.hpp"

namespace tatesens {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// Weighted sufficient statistics, grouped by cluster size so that the
// profile likelihood costs O(p^3) per evaluation regardless of n.
struct SizeGroup {
  double n = 0;
  double weight_sum = 0;  // sum of w_g
  MatrixXd sst;           // sum w_g s_g s_g'
  VectorXd st;            // sum w_g s_g t_g
  double tt = 0;          // sum w_g t_g^2
};

struct Profile {
  MatrixXd xtx;  // sum w X'X
  VectorXd xty;
  double yty = 0;
  double n_weighted = 0;  // sum w_g n_g
  std::vector<SizeGroup> groups;

  struct Eval {
    double objective;  // negative profile log-likelihood without constants
    VectorXd beta;
    MatrixXd a;
    double sigma2;
  };

  Eval evaluate(double lambda) const {
    MatrixXd a = xtx;
    VectorXd b = xty;
    double yy = yty;
    double logdet = 0;
    for (const auto& g : groups) {
      const double c = lambda / (1 + g.n * lambda);
      a -= c * g.sst;
      b -= c * g.st;
      yy -= c * g.tt;
      logdet += g.weight_sum * std::log1p(g.n * lambda);
    }
    Eigen::LDLT<MatrixXd> ldlt(a);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
      throw fit_error("random-intercepts GLS system is singular");
    }
    VectorXd beta = ldlt.solve(b);
    const double q = std::max(yy - b.dot(beta), 1e-300);
    const double sigma2 = q / n_weighted;
    return Eval{0.5 * n_weighted * std::log(sigma2) + 0.5 * logdet, std::move(beta), std::move(a),
                sigma2};
  }
};

}  // namespace

MixedFit fit_random_intercepts(const Design& design, std::span<const std::size_t> subject,
                               std::span<const double> subject_weights,
                               const MixedOptions& options) {
  const std::size_t n = design.rows();
  const std::size_t p = design.cols();
  if (static_cast<std::size_t>(design.y.size()) != n) throw fit_error("design has no response");
  if (subject.size() != n) throw fit_error("need one subject label per row");
  const std::size_t g_count = n == 0 ? 0 : *std::max_element(subject.begin(), subject.end()) + 1;
  std::vector<std::vector<std::size_t>> rows(g_count);
  for (std::size_t i = 0; i < n; ++i) rows[subject[i]].push_back(i);
  for (std::size_t g = 0; g < g_count; ++g) {
    if (rows[g].empty()) throw fit_error("subject index " + std::to_string(g) + " has no rows");
    if (options.require_two_rows && rows[g].size() != 2) {
      throw fit_error("unbalanced subjects: subject " + std::to_string(g) + " has " +
                      std::to_string(rows[g].size()) + " rows, expected 2");
    }
  }
  const bool weighted = !subject_weights.empty();
  if (weighted && subject_weights.size() != g_count) {
    throw fit_error("need one weight per subject (" + std::to_string(g_count) + ")");
  }
  std::vector<double> w(g_count, 1.0);
  if (weighted) {
    double total = 0;
    for (std::size_t g = 0; g < g_count; ++g) {
      if (!(subject_weights[g] >= 0) || !std::isfinite(subject_weights[g])) {
        throw fit_error("negative or non-finite subject weight");
      }
      w[g] = subject_weights[g];
      total += w[g];
    }
    if (total <= 0) throw fit_error("all subject weights are zero");
  }
  std::size_t g_pos = 0;
  for (double x : w) g_pos += x > 0 ? 1 : 0;
  if (g_pos <= p) throw fit_error("need more subjects than fixed-effect coefficients");

  Profile prof;
  prof.xtx = MatrixXd::Zero(static_cast<Index>(p), static_cast<Index>(p));
  prof.xty = VectorXd::Zero(static_cast<Index>(p));
  std::map<std::size_t, SizeGroup> by_size;
  std::vector<VectorXd> s_g(g_count);
  for (std::size_t g = 0; g < g_count; ++g) {
    VectorXd s = VectorXd::Zero(static_cast<Index>(p));
    double t = 0;
    for (std::size_t i : rows[g]) {
      const auto xi = design.x.row(static_cast<Index>(i));
      const double yi = design.y(static_cast<Index>(i));
      prof.xtx.noalias() += w[g] * xi.transpose() * xi;
      prof.xty += w[g] * yi * xi.transpose();
      prof.yty += w[g] * yi * yi;
      s += xi.transpose();
      t += yi;
    }
    auto& grp = by_size[rows[g].size()];
    if (grp.sst.size() == 0) {
      grp.n = static_cast<double>(rows[g].size());
      grp.sst = MatrixXd::Zero(static_cast<Index>(p), static_cast<Index>(p));
      grp.st = VectorXd::Zero(static_cast<Index>(p));
    }
    grp.weight_sum += w[g];
    grp.sst.noalias() += w[g] * s * s.transpose();
    grp.st += w[g] * t * s;
    grp.tt += w[g] * t * t;
    prof.n_weighted += w[g] * static_cast<double>(rows[g].size());
    s_g[g] = std::move(s);
  }
  for (auto& [k, grp] : by_size) prof.groups.push_back(std::move(grp));

  // Coarse grid over log(lambda), then Brent refinement around the best cell.
  auto objective = [&](double theta) { return prof.evaluate(std::exp(theta)).objective; };
  constexpr double kLo = -14.0, kHi = 14.0, kStep = 0.5;
  double best_theta = kLo;
  double best_val = std::numeric_limits<double>::infinity();
  for (double th = kLo; th <= kHi + 1e-12; th += kStep) {
    const double v = objective(th);
    if (v < best_val) {
      best_val = v;
      best_theta = th;
    }
  }
  std::uintmax_t max_iter = 200;
  const auto refined = boost::math::tools::brent_find_minima(
      objective, std::max(kLo, best_theta - kStep), std::min(kHi, best_theta + kStep), 52, max_iter);
  double lambda = std::exp(refined.first);
  best_val = refined.second;
  const auto at_zero = prof.evaluate(0.0);
  bool truncated = false;
  if (at_zero.objective <= best_val + 1e-12) {
    lambda = 0.0;
    truncated = true;
  }
  const auto ev = prof.evaluate(lambda);

  MixedFit fit;
  fit.n_subjects = g_pos;
  fit.residual_variance = ev.sigma2;
  fit.between_variance = lambda * ev.sigma2;
  fit.between_truncated = truncated;
  fit.log_likelihood = -0.5 * (prof.n_weighted * (std::log(2 * M_PI) + 1)) - ev.objective;

  FittedModel& m = fit.fixed;
  m.names = design.names;
  m.terms = design.terms;
  m.coef = ev.beta;
  m.link = Link::kIdentity;
  m.family = Family::kGaussian;
  m.n_obs = n;
  m.weights_used = weighted;
  m.fitted = design.x * ev.beta;
  m.deviance = -2 * fit.log_likelihood;
  m.convergence = Convergence{static_cast<int>(max_iter), 0.0, true, {}, false};
  m.vcov_kind = options.vcov.value_or(weighted ? VcovKind::kClusterSandwich : VcovKind::kModelBased);

  Eigen::LDLT<MatrixXd> ldlt(ev.a);
  MatrixXd a_inv = ldlt.solve(MatrixXd::Identity(static_cast<Index>(p), static_cast<Index>(p)));
  a_inv = (a_inv + a_inv.transpose()) / 2.0;
  if (m.vcov_kind == VcovKind::kModelBased) {
    m.vcov = ev.sigma2 * a_inv;
    if (!weighted) m.df = static_cast<double>(g_pos) - static_cast<double>(p);
  } else {
    // Cluster-robust on subjects: scores X_g' V_g^{-1} r_g up to sigma^2.
    MatrixXd meat = MatrixXd::Zero(static_cast<Index>(p), static_cast<Index>(p));
    const VectorXd resid = design.y - m.fitted;
    for (std::size_t g = 0; g < g_count; ++g) {
      if (w[g] == 0) continue;
      const double c = lambda / (1 + static_cast<double>(rows[g].size()) * lambda);
      VectorXd u = VectorXd::Zero(static_cast<Index>(p));
      double rsum = 0;
      for (std::size_t i : rows[g]) {
        const double r = resid(static_cast<Index>(i));
        u += r * design.x.row(static_cast<Index>(i)).transpose();
        rsum += r;
      }
      u -= c * rsum * s_g[g];
      meat.noalias() += (w[g] * w[g]) * u * u.transpose();
    }
    const double dg = static_cast<double>(g_pos);
    MatrixXd v = dg / (dg - 1) * a_inv * meat * a_inv;
    m.vcov = (v + v.transpose()) / 2.0;
    m.vcov_kind = VcovKind::kClusterSandwich;
  }
  return fit;
}

std::string mixed_report(const MixedFit& fit, const std::string& title, double ci_level) {
  std::ostringstream os;
  os << coefficient_report(fit.fixed, title, ci_level);
  os << "subjects: " << fit.n_subjects << "  between-subject variance: "
     << fmt6(fit.between_variance) << "  residual variance: " << fmt6(fit.residual_variance)
     << "  log-likelihood: " << fmt6(fit.log_likelihood);
  if (fit.between_truncated) os << "  NOTE: between-subject variance truncated at 0";
  os << "\n";
  return os.str();
}

}  // namespace tatesens
