#include <doctest.h>

#include <cmath>

#include "generators.hpp"
#include "oracles.hpp"
#include "tatesens/error.hpp"
#include "tatesens/estimation.hpp"

using namespace tatesens;

namespace {

oracle::Mat residual_meat_sandwich(const gen::Problem& pr, const std::vector<double>& beta,
                                   double factor) {
  const std::size_t p = beta.size();
  const oracle::Mat bread = oracle::inverse(oracle::xtwx(pr.x, pr.w));
  oracle::Mat meat = oracle::zeros(p, p);
  for (std::size_t i = 0; i < pr.x.size(); ++i) {
    const double s = pr.w[i] * (pr.y[i] - oracle::dot(pr.x[i], beta));
    for (std::size_t a = 0; a < p; ++a) {
      for (std::size_t b = 0; b < p; ++b) meat[a][b] += s * s * pr.x[i][a] * pr.x[i][b];
    }
  }
  oracle::Mat out = oracle::zeros(p, p);
  for (std::size_t a = 0; a < p; ++a) {
    for (std::size_t b = 0; b < p; ++b) {
      double v = 0;
      for (std::size_t k = 0; k < p; ++k) {
        for (std::size_t l = 0; l < p; ++l) v += bread[a][k] * meat[k][l] * bread[l][b];
      }
      out[a][b] = factor * v;
    }
  }
  return out;
}

}  // namespace

TEST_CASE("wls matches explicit normal equations on random problems") {
  gen::Rng r(101);
  for (int t = 0; t < 50; ++t) {
    const auto pr = gen::problem(r, 0, t % 2 == 1);
    const auto want = oracle::normal_equations(pr.x, pr.y, pr.w);
    const FittedModel m = fit_wls(pr.design, t % 2 == 1 ? std::span<const double>(pr.w)
                                                         : std::span<const double>());
    CHECK(gen::max_rel_err(m.coef, want) < 1e-8);
  }
}

TEST_CASE("wls model-based variance is sigma2 times the inverse cross-product") {
  gen::Rng r(7);
  const auto pr = gen::problem(r, 0, false);
  const FittedModel m = fit_wls(pr.design);
  const auto beta = oracle::normal_equations(pr.x, pr.y);
  double rss = 0;
  for (std::size_t i = 0; i < pr.x.size(); ++i) {
    const double e = pr.y[i] - oracle::dot(pr.x[i], beta);
    rss += e * e;
  }
  const double n = static_cast<double>(pr.x.size()), p = static_cast<double>(beta.size());
  const auto inv = oracle::inverse(oracle::xtwx(pr.x, pr.w));
  for (std::size_t a = 0; a < beta.size(); ++a) {
    for (std::size_t b = 0; b < beta.size(); ++b) {
      CHECK(m.vcov(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) ==
            doctest::Approx(rss / (n - p) * inv[a][b]).epsilon(1e-9));
    }
  }
  REQUIRE(m.df.has_value());
  CHECK(*m.df == n - p);
}

TEST_CASE("wls sandwich matches the HC1 formula") {
  gen::Rng r(8);
  const auto pr = gen::problem(r, 0, true);
  const FittedModel m = fit_wls(pr.design, pr.w);
  CHECK(m.vcov_kind == VcovKind::kSandwich);
  CHECK_FALSE(m.df.has_value());
  const auto beta = oracle::normal_equations(pr.x, pr.y, pr.w);
  const double n = static_cast<double>(pr.x.size()), p = static_cast<double>(beta.size());
  const auto want = residual_meat_sandwich(pr, beta, n / (n - p));
  for (std::size_t a = 0; a < beta.size(); ++a) {
    for (std::size_t b = 0; b < beta.size(); ++b) {
      CHECK(m.vcov(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) ==
            doctest::Approx(want[a][b]).epsilon(1e-8));
    }
  }
}

TEST_CASE("cluster sandwich with singleton clusters equals HC1 up to the cluster factor") {
  gen::Rng r(9);
  const auto pr = gen::problem(r, 0, true);
  FitOptions o;
  o.vcov = VcovKind::kClusterSandwich;
  for (std::size_t i = 0; i < pr.x.size(); ++i) o.clusters.push_back(i);
  const FittedModel c = fit_wls(pr.design, pr.w, o);
  const FittedModel h = fit_wls(pr.design, pr.w);
  const double n = static_cast<double>(pr.x.size());
  // G/(G-1) (n-1)/(n-p) with G = n reduces to n/(n-p).
  CHECK(c.vcov.isApprox(h.vcov, 1e-10));
  (void)n;
}

TEST_CASE("logistic irls matches full newton on random problems") {
  gen::Rng r(202);
  int done = 0;
  for (int t = 0; t < 60 && done < 50; ++t) {
    const auto pr = gen::problem(r, 1, t % 2 == 1);
    FittedModel m;
    try {
      m = fit_glm_irls(pr.design, Link::kLogit, Family::kBinomial, pr.w);
    } catch (const Error&) {
      continue;  // separated draw
    }
    const auto want = oracle::newton_glm(pr.x, pr.y, 0, pr.w);
    CHECK(gen::max_rel_err(m.coef, want) < 1e-8);
    ++done;
  }
  CHECK(done == 50);
}

TEST_CASE("poisson irls matches full newton") {
  gen::Rng r(303);
  for (int t = 0; t < 20; ++t) {
    const auto pr = gen::problem(r, 2, t % 2 == 0);
    const FittedModel m = fit_glm_irls(pr.design, Link::kLog, Family::kPoisson, pr.w);
    const auto want = oracle::newton_glm(pr.x, pr.y, 1, pr.w);
    CHECK(gen::max_rel_err(m.coef, want) < 1e-8);
  }
}

TEST_CASE("logistic model-based variance is the inverse information") {
  gen::Rng r(4);
  const auto pr = gen::problem(r, 1, false, 200, 4);
  const FittedModel m = fit_glm_irls(pr.design, Link::kLogit, Family::kBinomial);
  const auto beta = oracle::newton_glm(pr.x, pr.y, 0);
  std::vector<double> v(pr.x.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double mu = 1 / (1 + std::exp(-oracle::dot(pr.x[i], beta)));
    v[i] = mu * (1 - mu);
  }
  const auto inv = oracle::inverse(oracle::xtwx(pr.x, v));
  for (std::size_t a = 0; a < beta.size(); ++a) {
    CHECK(m.vcov(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(a)) ==
          doctest::Approx(inv[a][a]).epsilon(1e-7));
  }
  CHECK_FALSE(m.df.has_value());
}

TEST_CASE("log-binomial recovers a known risk ratio") {
  // Two groups with risks 0.2 and 0.4: log RR = log 2 exactly at the MLE.
  std::vector<std::vector<double>> x;
  std::vector<double> y;
  for (int g = 0; g < 2; ++g) {
    for (int i = 0; i < 100; ++i) {
      x.push_back({1.0, static_cast<double>(g)});
      y.push_back(i < (g == 0 ? 20 : 40) ? 1.0 : 0.0);
    }
  }
  const FittedModel m = fit_glm_irls(gen::to_design(x, y), Link::kLog, Family::kBinomial);
  CHECK(m.coef(1) == doctest::Approx(std::log(2.0)).epsilon(1e-9));
  CHECK(m.coef(0) == doctest::Approx(std::log(0.2)).epsilon(1e-9));
}

TEST_CASE("complete separation is reported as a fit error") {
  std::vector<std::vector<double>> x;
  std::vector<double> y;
  for (int i = 0; i < 40; ++i) {
    const double v = i - 19.5;
    x.push_back({1.0, v});
    y.push_back(v > 0 ? 1.0 : 0.0);
  }
  CHECK_THROWS_AS(fit_glm_irls(gen::to_design(x, y), Link::kLogit, Family::kBinomial), Error);
}

TEST_CASE("too few observations is a fit error") {
  std::vector<std::vector<double>> x = {{1, 0}, {1, 1}};
  std::vector<double> y = {0, 1};
  try {
    fit_wls(gen::to_design(x, y));
    FAIL("expected a fit error");
  } catch (const Error& e) {
    CHECK(e.category() == ErrorCategory::kFit);
  }
}

TEST_CASE("lincom agrees with a double-loop quadratic form") {
  gen::Rng r(55);
  for (int t = 0; t < 100; ++t) {
    const auto pr = gen::problem(r, 0, t % 3 == 0, 120, 6);
    const FittedModel m = fit_wls(pr.design, t % 3 == 0 ? std::span<const double>(pr.w)
                                                         : std::span<const double>());
    Combination c;
    std::vector<double> cv(m.names.size(), 0.0);
    for (std::size_t j = 0; j < m.names.size(); ++j) {
      if (r.coin(0.7)) {
        cv[j] = r.normal();
        c.emplace_back(m.names[j], cv[j]);
      }
    }
    const LinComResult lc = lincom(m, c);
    const double var = oracle::quad_form(cv, gen::to_rows(m.vcov));
    CHECK(std::fabs(lc.std_error * lc.std_error - var) <= 1e-12 * std::max(1.0, var));
    double est = 0;
    for (std::size_t j = 0; j < cv.size(); ++j) est += cv[j] * m.coef(static_cast<Eigen::Index>(j));
    CHECK(lc.estimate == doctest::Approx(est).epsilon(1e-12));
    const double q = critical_value(m.df, 0.95);
    CHECK(lc.upper - lc.estimate == doctest::Approx(q * lc.std_error).epsilon(1e-12));
  }
}

TEST_CASE("lincom rejects unknown coefficient names") {
  gen::Rng r(1);
  const auto pr = gen::problem(r, 0, false);
  const FittedModel m = fit_wls(pr.design);
  CHECK_THROWS_AS(lincom(m, {{"nope", 1.0}}), Error);
}

TEST_CASE("critical values") {
  CHECK(critical_value(std::nullopt, 0.95) == doctest::Approx(1.959963984540054).epsilon(1e-12));
  CHECK(critical_value(10.0, 0.95) == doctest::Approx(2.228138851986274).epsilon(1e-12));
}

TEST_CASE("fmt6 renders six significant digits and NA") {
  CHECK(fmt6(36.58577) == "36.5858");
  CHECK(fmt6(std::nan("")) == "NA");
  CHECK(fmt6(1234567.0) == "1.23457e+06");
}

TEST_CASE("weights scale invariance of the point estimate") {
  gen::Rng r(77);
  auto pr = gen::problem(r, 0, true);
  const FittedModel a = fit_wls(pr.design, pr.w);
  for (auto& w : pr.w) w *= 17.0;
  const FittedModel b = fit_wls(pr.design, pr.w);
  CHECK(a.coef.isApprox(b.coef, 1e-12));
  CHECK(a.vcov.isApprox(b.vcov, 1e-10));
}
