#include "shiftbench/worst_case.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <random>

#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>

#include "shiftbench/error.hpp"

namespace shiftbench {

namespace {

void check_problem(const Eigen::VectorXd& g, const Eigen::MatrixXd& H)
{
  if (H.rows() != g.size() || H.cols() != g.size())
    throw ContractError("sg2 must be " + std::to_string(g.size()) + " x " + std::to_string(g.size()));
  if (!g.allFinite() || !H.allFinite())
    throw DomainError("curvature contains non-finite entries");
  const double scale = 1.0 + (H.size() ? H.cwiseAbs().maxCoeff() : 0.0);
  if (H.size() && (H - H.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
    throw ContractError("sg2 is not symmetric");
}

double surrogate(const Eigen::VectorXd& g, const Eigen::MatrixXd& H, const Eigen::VectorXd& d, double base)
{
  return base + g.dot(d) + 0.5 * d.dot(H * d);
}

// Sign convention for eigenvector ties: first nonzero coordinate positive.
Eigen::VectorXd canonical_sign(Eigen::VectorXd v)
{
  for (Eigen::Index k = 0; k < v.size(); ++k)
    if (std::abs(v(k)) > 1e-12) {
      if (v(k) < 0)
        v = -v;
      break;
    }
  return v;
}

bool lex_less(const Eigen::VectorXd& a, const Eigen::VectorXd& b)
{
  return std::lexicographical_compare(a.data(), a.data() + a.size(), b.data(), b.data() + b.size());
}

// Deterministic reduction: larger value wins, then lexicographically smaller delta.
bool better(double va, const Eigen::VectorXd& a, double vb, const Eigen::VectorXd& b)
{
  if (va != vb)
    return va > vb;
  return lex_less(a, b);
}

} // namespace

ConstraintSpec ConstraintSpec::ball(double lambda)
{
  ConstraintSpec c;
  c.form = Form::Ball;
  c.lambda = lambda;
  return c;
}

ConstraintSpec ConstraintSpec::quadratic(Eigen::MatrixXd A, Eigen::VectorXd b, double lambda)
{
  ConstraintSpec c;
  c.form = Form::Quadratic;
  c.A = std::move(A);
  c.b = std::move(b);
  c.lambda = lambda;
  return c;
}

ConstraintSpec ConstraintSpec::box(Eigen::VectorXd lower, Eigen::VectorXd upper)
{
  ConstraintSpec c;
  c.form = Form::Box;
  c.lower = std::move(lower);
  c.upper = std::move(upper);
  return c;
}

void ConstraintSpec::validate(int d) const
{
  switch (form) {
  case Form::Ball:
    if (!(lambda > 0) || !std::isfinite(lambda))
      throw DomainError("ball radius lambda must be positive and finite");
    return;
  case Form::Quadratic: {
    if (A.rows() != d || A.cols() != d || b.size() != d)
      throw ContractError("quadratic constraint must have A " + std::to_string(d) + " x " + std::to_string(d) +
                          " and b of length " + std::to_string(d));
    if (!A.allFinite() || !b.allFinite() || !std::isfinite(lambda))
      throw DomainError("quadratic constraint has non-finite entries");
    if ((A - A.transpose()).cwiseAbs().maxCoeff() > 1e-10 * (1.0 + A.cwiseAbs().maxCoeff()))
      throw ContractError("constraint matrix A is not symmetric");
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (A + A.transpose()), Eigen::EigenvaluesOnly);
    if (!(es.eigenvalues()(0) > 0))
      throw UnsupportedConstraintError("constraint matrix A must be positive definite");
    const Eigen::VectorXd c = -0.5 * A.ldlt().solve(b);
    if (!(lambda + c.dot(A * c) > 0))
      throw DomainError("quadratic constraint set is empty or a single point");
    return;
  }
  case Form::Box:
    if (lower.size() != d || upper.size() != d)
      throw ContractError("box bounds must have length " + std::to_string(d));
    for (int k = 0; k < d; ++k) {
      if (!std::isfinite(lower(k)) || !std::isfinite(upper(k)))
        throw DomainError("box bounds must be finite");
      if (lower(k) > upper(k))
        throw DomainError("box lower bound exceeds upper bound at coordinate " + std::to_string(k));
    }
    return;
  }
}

bool ConstraintSpec::contains(const Eigen::VectorXd& delta, double tol) const
{
  switch (form) {
  case Form::Ball:
    return delta.norm() <= lambda * (1.0 + tol);
  case Form::Quadratic:
    return delta.dot(A * delta) + b.dot(delta) <= lambda + tol * (1.0 + std::abs(lambda));
  case Form::Box:
    return ((delta - lower).array() >= -tol).all() && ((upper - delta).array() >= -tol).all();
  }
  return false;
}

Eigen::VectorXd ConstraintSpec::project(const Eigen::VectorXd& delta) const
{
  switch (form) {
  case Form::Ball: {
    const double n = delta.norm();
    return n > lambda ? Eigen::VectorXd(delta * (lambda / n)) : delta;
  }
  case Form::Quadratic: {
    if (contains(delta, 0.0))
      return delta;
    const Eigen::VectorXd c = -0.5 * A.ldlt().solve(b);
    const Eigen::VectorXd v = delta - c;
    const double rho2 = lambda + c.dot(A * c);
    return c + v * std::sqrt(rho2 / v.dot(A * v));
  }
  case Form::Box:
    return delta.cwiseMax(lower).cwiseMin(upper);
  }
  return delta;
}

TrustRegionResult trust_region_max(const Eigen::VectorXd& g, const Eigen::MatrixXd& H, double radius, double base)
{
  check_problem(g, H);
  if (!(radius > 0) || !std::isfinite(radius))
    throw DomainError("trust-region radius lambda must be positive and finite");
  const Eigen::Index d = g.size();
  TrustRegionResult out;
  out.base_loss = base;
  if (d == 0) {
    out.delta_star = Eigen::VectorXd(0);
    out.predicted_loss = base;
    return out;
  }
  const Eigen::MatrixXd Hs = 0.5 * (H + H.transpose());
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Hs);
  const Eigen::VectorXd& lam = es.eigenvalues();
  const Eigen::MatrixXd& Q = es.eigenvectors();
  const Eigen::VectorXd gam = Q.transpose() * g;
  const double lmax = lam(d - 1);
  const double gnorm = g.norm();
  const double eig_tol = 1e-12 * std::max(1.0, lam.cwiseAbs().maxCoeff());

  auto y_of = [&](double nu, bool skip_lead) {
    Eigen::VectorXd y = Eigen::VectorXd::Zero(d);
    for (Eigen::Index i = 0; i < d; ++i) {
      if (skip_lead && lam(i) >= lmax - eig_tol)
        continue;
      if (gam(i) != 0.0)
        y(i) = gam(i) / (nu - lam(i));
    }
    return y;
  };

  Eigen::VectorXd y;
  double nu = 0.0;
  bool solved = false;
  if (lmax < 0) {
    y = y_of(0.0, false);
    if (y.norm() <= radius) {
      solved = true;
      out.on_boundary = false;
    }
  }
  if (!solved && lmax >= 0) {
    double lead = 0.0;
    for (Eigen::Index i = 0; i < d; ++i)
      if (lam(i) >= lmax - eig_tol)
        lead += gam(i) * gam(i);
    if (std::sqrt(lead) <= 1e-10 * gnorm || gnorm == 0.0) {
      const Eigen::VectorXd rest = y_of(lmax, true);
      const double rn = rest.norm();
      if (rn <= radius) {
        // Hard case: complete to the boundary along a leading eigenvector.
        Eigen::Index j = d - 1;
        while (j > 0 && lam(j - 1) >= lmax - eig_tol)
          --j;
        const Eigen::VectorXd v = canonical_sign(Q.col(j));
        const double tau = std::sqrt(std::max(0.0, radius * radius - rn * rn));
        nu = lmax;
        out.hard_case = true;
        out.on_boundary = true;
        out.delta_star = Q * rest + tau * v;
        solved = true;
      }
    }
  }
  if (!solved) {
    // Boundary solution: root of 1/||y(nu)|| - 1/radius on (max(lmax, 0), hi].
    double lo = std::max(lmax, 0.0);
    double hi = lo + gnorm / radius;
    hi += 1e-15 * std::max(1.0, std::abs(hi));
    nu = hi;
    int it = 0;
    for (; it < 500; ++it) {
      y = y_of(nu, false);
      const double n = y.norm();
      if (std::abs(n - radius) <= 1e-15 * radius)
        break;
      const double phi = 1.0 / n - 1.0 / radius;
      if (phi > 0)
        hi = nu;
      else
        lo = nu;
      if (hi - lo <= 4 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(hi)))
        break;
      double dphi = 0.0;
      for (Eigen::Index i = 0; i < d; ++i)
        dphi += gam(i) * gam(i) / std::pow(nu - lam(i), 3);
      dphi /= n * n * n;
      double next = nu - phi / dphi;
      if (!(next > lo && next < hi))
        next = 0.5 * (lo + hi);
      nu = next;
    }
    out.iterations = it + 1;
    y = y_of(nu, false);
    const double n = y.norm();
    if (n > radius)
      y *= radius / n;
    out.on_boundary = true;
  }
  if (out.delta_star.size() == 0)
    out.delta_star = Q * y;
  const double n = out.delta_star.norm();
  if (n > radius)
    out.delta_star *= radius / n;
  out.multiplier = nu;
  out.predicted_loss = surrogate(g, Hs, out.delta_star, base);
  out.kkt_residual = ((Hs - nu * Eigen::MatrixXd::Identity(d, d)) * out.delta_star + g).norm();
  out.complementary_slackness = std::abs(nu * (radius - out.delta_star.norm()));
  out.dual_min_eigenvalue = nu - lmax;
  return out;
}

TrustRegionResult trust_region_max(const CurvatureEstimate& curv, double lambda)
{
  return trust_region_max(curv.sg1, curv.sg2, lambda, curv.base_loss);
}

TrustRegionResult quad_constrained_max(const Eigen::VectorXd& g, const Eigen::MatrixXd& H, const ConstraintSpec& cons,
                                       double base)
{
  check_problem(g, H);
  if (cons.form != ConstraintSpec::Form::Quadratic)
    throw ContractError("quad_constrained_max needs a Quadratic constraint");
  const int d = static_cast<int>(g.size());
  cons.validate(d);
  const Eigen::MatrixXd A = 0.5 * (cons.A + cons.A.transpose());
  const Eigen::MatrixXd Hs = 0.5 * (H + H.transpose());
  const Eigen::LLT<Eigen::MatrixXd> llt(A);
  if (llt.info() != Eigen::Success)
    throw UnsupportedConstraintError("constraint matrix A must be positive definite");
  const Eigen::MatrixXd L = llt.matrixL();
  const Eigen::VectorXd c = -0.5 * llt.solve(cons.b);
  const double rho = std::sqrt(cons.lambda + c.dot(A * c));
  // Whitened problem in y = L^T (delta - c).
  const Eigen::VectorXd gw = L.triangularView<Eigen::Lower>().solve(g + Hs * c);
  Eigen::MatrixXd Hw = L.triangularView<Eigen::Lower>().solve(Hs);
  Hw = L.triangularView<Eigen::Lower>().solve(Hw.transpose()).eval();
  Hw = 0.5 * (Hw + Hw.transpose()).eval();
  const double base_w = surrogate(g, Hs, c, base);
  TrustRegionResult w = trust_region_max(gw, Hw, rho, base_w);

  TrustRegionResult out = w;
  out.base_loss = base;
  out.delta_star = c + L.transpose().triangularView<Eigen::Upper>().solve(w.delta_star);
  out.predicted_loss = surrogate(g, Hs, out.delta_star, base);
  const double nu = w.multiplier;
  out.kkt_residual = (g + Hs * out.delta_star - nu * (A * out.delta_star + 0.5 * cons.b)).norm();
  const double value = out.delta_star.dot(A * out.delta_star) + cons.b.dot(out.delta_star);
  out.complementary_slackness = std::abs(nu * (cons.lambda - value));
  const Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> ges(Hs, A, Eigen::EigenvaluesOnly);
  out.dual_min_eigenvalue = nu - ges.eigenvalues()(d - 1);
  return out;
}

TrustRegionResult quad_constrained_max(const CurvatureEstimate& curv, const ConstraintSpec& cons)
{
  return quad_constrained_max(curv.sg1, curv.sg2, cons, curv.base_loss);
}

namespace {

// Stationary point of the surrogate on the face where `free` coordinates
// vary and the rest sit at `x`. Requires the free block negative definite.
bool face_maximizer(const Eigen::VectorXd& g, const Eigen::MatrixXd& H, const std::vector<int>& free,
                    Eigen::VectorXd& x)
{
  const int k = static_cast<int>(free.size());
  if (k == 0)
    return true;
  Eigen::MatrixXd Hff(k, k);
  Eigen::VectorXd rhs(k);
  const Eigen::VectorXd grad_fixed = g + H * x;  // x has zeros in free coords
  for (int a = 0; a < k; ++a) {
    rhs(a) = grad_fixed(free[a]);
    for (int b = 0; b < k; ++b)
      Hff(a, b) = H(free[a], free[b]);
  }
  const Eigen::LLT<Eigen::MatrixXd> llt(-Hff);
  if (llt.info() != Eigen::Success)
    return false;
  const Eigen::VectorXd xf = llt.solve(rhs);
  for (int a = 0; a < k; ++a)
    x(free[a]) = xf(a);
  return true;
}

double box_kkt_violation(const Eigen::VectorXd& g, const Eigen::MatrixXd& H, const ConstraintSpec& cons,
                         const Eigen::VectorXd& x)
{
  const Eigen::VectorXd grad = g + H * x;
  double v = 0.0;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    const double tol = 1e-12 * (1.0 + std::abs(x(k)));
    const bool at_lo = x(k) <= cons.lower(k) + tol;
    const bool at_hi = x(k) >= cons.upper(k) - tol;
    double e = grad(k);
    if (at_lo && at_hi)
      e = 0.0;
    else if (at_lo)
      e = std::max(0.0, grad(k));
    else if (at_hi)
      e = std::min(0.0, grad(k));
    v += e * e;
  }
  return std::sqrt(v);
}

} // namespace

TrustRegionResult box_constrained_max(const Eigen::VectorXd& g, const Eigen::MatrixXd& H, const ConstraintSpec& cons,
                                      double base, const BoxSearchConfig& config)
{
  check_problem(g, H);
  if (cons.form != ConstraintSpec::Form::Box)
    throw ContractError("box_constrained_max needs a Box constraint");
  const int d = static_cast<int>(g.size());
  cons.validate(d);
  const Eigen::MatrixXd Hs = 0.5 * (H + H.transpose());
  std::vector<int> open;
  for (int k = 0; k < d; ++k)
    if (cons.lower(k) < cons.upper(k))
      open.push_back(k);

  TrustRegionResult out;
  out.base_loss = base;
  Eigen::VectorXd best = cons.lower;
  double best_val = -std::numeric_limits<double>::infinity();
  const int k = static_cast<int>(open.size());
  const double tol = 1e-12;

  if (k <= config.max_exact_dim) {
    // Each open coordinate is at its lower bound, its upper bound, or free.
    std::vector<int> state(k, 0);
    long faces = 0;
    while (true) {
      ++faces;
      Eigen::VectorXd x = cons.lower;
      std::vector<int> free;
      for (int a = 0; a < k; ++a) {
        const int c = open[a];
        if (state[a] == 0)
          x(c) = cons.lower(c);
        else if (state[a] == 1)
          x(c) = cons.upper(c);
        else {
          x(c) = 0.0;
          free.push_back(c);
        }
      }
      if (face_maximizer(g, Hs, free, x)) {
        bool inside = true;
        for (int c : free)
          if (x(c) < cons.lower(c) - tol || x(c) > cons.upper(c) + tol)
            inside = false;
        if (inside) {
          x = x.cwiseMax(cons.lower).cwiseMin(cons.upper);
          const double v = surrogate(g, Hs, x, base);
          if (better(v, x, best_val, best)) {
            best_val = v;
            best = x;
          }
        }
      }
      int a = 0;
      while (a < k && state[a] == 2)
        state[a++] = 0;
      if (a == k)
        break;
      ++state[a];
    }
    out.iterations = static_cast<int>(faces);
    out.approximate = false;
  } else {
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Hs, Eigen::EigenvaluesOnly);
    const double L = std::max(1e-12, es.eigenvalues().cwiseAbs().maxCoeff());
    Rng rng = make_rng(config.seed, "box_search");
    for (int s = 0; s < config.starts; ++s) {
      Eigen::VectorXd x(d);
      for (int c = 0; c < d; ++c) {
        if (s == 0)
          x(c) = std::clamp(0.0, cons.lower(c), cons.upper(c));
        else
          x(c) = std::uniform_real_distribution<double>(cons.lower(c), cons.upper(c))(rng);
      }
      for (int it = 0; it < config.iterations; ++it) {
        const Eigen::VectorXd next = (x + (g + Hs * x) / L).cwiseMax(cons.lower).cwiseMin(cons.upper);
        const double step = (next - x).norm();
        x = next;
        if (step <= 1e-13 * (1.0 + x.norm()))
          break;
      }
      // Polish on the active face.
      Eigen::VectorXd y = x;
      std::vector<int> free;
      for (int c : open)
        if (x(c) > cons.lower(c) + 1e-9 && x(c) < cons.upper(c) - 1e-9) {
          free.push_back(c);
          y(c) = 0.0;
        }
      if (face_maximizer(g, Hs, free, y)) {
        y = y.cwiseMax(cons.lower).cwiseMin(cons.upper);
        if (surrogate(g, Hs, y, base) > surrogate(g, Hs, x, base))
          x = y;
      }
      const double v = surrogate(g, Hs, x, base);
      if (better(v, x, best_val, best)) {
        best_val = v;
        best = x;
      }
    }
    out.iterations = config.starts;
    out.approximate = true;
  }
  out.delta_star = best;
  out.predicted_loss = surrogate(g, Hs, best, base);
  out.kkt_residual = box_kkt_violation(g, Hs, cons, best);
  for (int c : open)
    if (best(c) <= cons.lower(c) || best(c) >= cons.upper(c))
      out.on_boundary = true;
  return out;
}

TrustRegionResult surrogate_max(const CurvatureEstimate& curv, const ConstraintSpec& cons,
                                const BoxSearchConfig& box_config)
{
  switch (cons.form) {
  case ConstraintSpec::Form::Ball:
    return trust_region_max(curv, cons.lambda);
  case ConstraintSpec::Form::Quadratic:
    return quad_constrained_max(curv, cons);
  case ConstraintSpec::Form::Box:
    return box_constrained_max(curv.sg1, curv.sg2, cons, curv.base_loss, box_config);
  }
  throw ContractError("unknown constraint form");
}

namespace {

struct NmContext {
  const IsObjective* objective;
  const ConstraintSpec* cons;
  const std::vector<int>* free;
  Eigen::VectorXd anchor;  // full delta with fixed coordinates set
  double penalty;
  long evals = 0;
};

Eigen::VectorXd expand(const NmContext& ctx, const gsl_vector* x)
{
  Eigen::VectorXd full = ctx.anchor;
  for (std::size_t a = 0; a < ctx.free->size(); ++a)
    full((*ctx.free)[a]) = gsl_vector_get(x, a);
  return full;
}

double nm_objective(const gsl_vector* x, void* params)
{
  auto* ctx = static_cast<NmContext*>(params);
  ++ctx->evals;
  const Eigen::VectorXd full = expand(*ctx, x);
  const Eigen::VectorXd p = ctx->cons->project(full);
  try {
    return -((*ctx->objective)(p) - ctx->penalty * (full - p).squaredNorm());
  } catch (const DomainError&) {
    return 1e100;
  }
}

} // namespace

IsSearchResult is_objective_max(const IsObjective& objective, int d, const ConstraintSpec& cons,
                                const IsSearchConfig& config)
{
  if (cons.form == ConstraintSpec::Form::Quadratic)
    throw UnsupportedConstraintError("the IS search supports Ball and Box constraints");
  cons.validate(d);
  const auto t0 = std::chrono::steady_clock::now();

  std::vector<int> free;
  Eigen::VectorXd anchor = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd scale(d);
  for (int k = 0; k < d; ++k) {
    if (cons.form == ConstraintSpec::Form::Ball) {
      free.push_back(k);
      scale(k) = cons.lambda;
    } else if (cons.lower(k) < cons.upper(k)) {
      free.push_back(k);
      scale(k) = 0.5 * (cons.upper(k) - cons.lower(k));
    } else {
      anchor(k) = cons.lower(k);
      scale(k) = 0.0;
    }
  }
  const double typical = free.empty() ? 0.0 : scale.maxCoeff();
  NmContext ctx{&objective, &cons, &free, anchor, config.penalty / std::max(typical * typical, 1e-300), 0};

  IsSearchResult best;
  best.value = -std::numeric_limits<double>::infinity();
  const int k = static_cast<int>(free.size());
  if (k == 0) {
    best.delta = cons.project(anchor);
    best.value = objective(best.delta);
    best.evals = 1;
    return best;
  }

  // Starts: origin, signed half-scale axis points, then random feasible points.
  Rng rng = make_rng(config.seed, "is_search");
  std::vector<Eigen::VectorXd> starts;
  starts.push_back(cons.project(anchor));
  std::vector<std::pair<int, int>> axes;
  for (int a = 0; a < k; ++a) {
    axes.emplace_back(a, 1);
    axes.emplace_back(a, -1);
  }
  std::shuffle(axes.begin(), axes.end(), rng);
  const int n_axis = std::min<int>(static_cast<int>(axes.size()), (config.starts - 1) / 2);
  for (int s = 0; s < n_axis; ++s) {
    Eigen::VectorXd x = anchor;
    const int c = free[axes[s].first];
    x(c) += 0.5 * axes[s].second * scale(c);
    starts.push_back(cons.project(x));
  }
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unit;
  while (static_cast<int>(starts.size()) < config.starts) {
    Eigen::VectorXd x = anchor;
    if (cons.form == ConstraintSpec::Form::Ball) {
      Eigen::VectorXd dir(k);
      for (int a = 0; a < k; ++a)
        dir(a) = normal(rng);
      dir *= cons.lambda * std::pow(unit(rng), 1.0 / k) / dir.norm();
      for (int a = 0; a < k; ++a)
        x(free[a]) = dir(a);
    } else {
      for (int c : free)
        x(c) = cons.lower(c) + unit(rng) * (cons.upper(c) - cons.lower(c));
    }
    starts.push_back(x);
  }

  gsl_set_error_handler_off();
  gsl_multimin_function fn{&nm_objective, static_cast<std::size_t>(k), &ctx};
  gsl_vector* x = gsl_vector_alloc(k);
  gsl_vector* step = gsl_vector_alloc(k);
  gsl_multimin_fminimizer* nm = gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, k);
  for (const auto& s : starts) {
    for (int a = 0; a < k; ++a) {
      gsl_vector_set(x, a, s(free[a]));
      gsl_vector_set(step, a, 0.25 * scale(free[a]));
    }
    const long start_evals = ctx.evals;
    gsl_multimin_fminimizer_set(nm, &fn, x, step);
    while (ctx.evals - start_evals < config.max_evals_per_start) {
      if (gsl_multimin_fminimizer_iterate(nm) != GSL_SUCCESS)
        break;
      if (gsl_multimin_fminimizer_size(nm) < config.tolerance * typical)
        break;
    }
    const Eigen::VectorXd cand = cons.project(expand(ctx, gsl_multimin_fminimizer_x(nm)));
    double v;
    try {
      v = objective(cand);
    } catch (const DomainError&) {
      continue;
    }
    if (better(v, cand, best.value, best.delta)) {
      best.value = v;
      best.delta = cand;
    }
  }
  gsl_multimin_fminimizer_free(nm);
  gsl_vector_free(step);
  gsl_vector_free(x);
  if (best.delta.size() == 0) {
    best.delta = starts.front();
    best.value = objective(best.delta);
  }
  best.evals = ctx.evals;
  best.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return best;
}

IsSearchResult is_objective_max(const ShiftModel& model, const SampleTable& sample, const ConstraintSpec& cons,
                                const IsSearchConfig& config)
{
  const auto t0 = std::chrono::steady_clock::now();
  const IsObjective objective(model, sample);
  IsSearchResult r = is_objective_max(objective, model.d_delta(), cons, config);
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

Subpop2x2Result subpop_worst_case_2x2(double p11, double p10, const std::array<std::array<double, 2>, 2>& mu,
                                      double p_y1, double alpha)
{
  for (double p : {p11, p10, p_y1})
    if (!(p >= 0.0 && p <= 1.0))
      throw DomainError("probabilities must lie in [0, 1]");
  if (!(alpha >= 0.0 && alpha < 1.0))
    throw DomainError("alpha must satisfy 0 <= alpha < 1");
  const double keep = 1.0 - alpha;
  auto range = [&](double p) {
    return std::array<double, 2>{std::max(0.0, (p - alpha) / keep), std::min(p / keep, 1.0)};
  };
  Subpop2x2Result out;
  out.q11_range = range(p11);
  out.q10_range = range(p10);
  const double slope11 = p_y1 * (mu[1][1] - mu[0][1]);
  const double slope10 = (1.0 - p_y1) * (mu[1][0] - mu[0][0]);
  const double constant = p_y1 * mu[0][1] + (1.0 - p_y1) * mu[0][0];
  auto choices = [](double slope, const std::array<double, 2>& r) {
    if (slope > 0)
      return std::vector<double>{r[1]};
    if (slope < 0)
      return std::vector<double>{r[0]};
    return r[0] == r[1] ? std::vector<double>{r[0]} : std::vector<double>{r[0], r[1]};
  };
  for (double a : choices(slope11, out.q11_range))
    for (double b : choices(slope10, out.q10_range))
      out.corners.push_back({a, b});
  out.q11 = out.corners.front()[0];
  out.q10 = out.corners.front()[1];
  out.worst_loss = out.q11 * slope11 + out.q10 * slope10 + constant;
  return out;
}

} // namespace shiftbench
