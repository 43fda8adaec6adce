#pragma once

#include <numbers>
#include <vector>

#include "bridgekit/common.hpp"
#include "bridgekit/graph.hpp"

namespace bridgekit {

// Cosine noise schedule. betas and alpha_bars are indexed by step with
// betas[0] unused, alpha_bars[0] = 1, and alpha_bars rebuilt as the running
// product of (1 - beta_t) so the product identity survives clipping.
struct ProcessSchedule {
  int T = 0;
  std::vector<double> betas;
  std::vector<double> alpha_bars;
};

inline ProcessSchedule cosine_schedule(int T) {
  if (T < 2) throw std::invalid_argument("cosine_schedule: T must be at least 2");
  constexpr double s = 0.008;
  auto f = [](double u) {
    double c = std::cos((u + s) / (1.0 + s) * std::numbers::pi / 2.0);
    return c * c;
  };
  double f0 = f(0.0);
  ProcessSchedule sch;
  sch.T = T;
  sch.betas.assign(T + 1, 0.0);
  sch.alpha_bars.assign(T + 1, 1.0);
  double prev_raw = 1.0;
  for (int t = 1; t <= T; ++t) {
    double raw = f(static_cast<double>(t) / T) / f0;
    double beta = 1.0 - raw / prev_raw;
    prev_raw = raw;
    beta = std::clamp(beta, 1e-5, 0.999);
    sch.betas[t] = beta;
    sch.alpha_bars[t] = sch.alpha_bars[t - 1] * (1.0 - beta);
  }
  return sch;
}

// D3PM-style uniform-mixing transition kernels over K categories:
// Q_t = (1 - beta_t) I + beta_t U. Cumulative kernels are built by explicit
// matrix products so they stay correct under beta clipping.
class CategoricalKernel {
 public:
  CategoricalKernel(const ProcessSchedule& sch, int K) : K_(K), T_(sch.T) {
    if (K < 1) throw std::invalid_argument("CategoricalKernel: K must be positive");
    q_.resize(T_ + 1);
    qbar_.resize(T_ + 1);
    qbar_[0] = identity();
    for (int t = 1; t <= T_; ++t) {
      double beta = sch.betas[t];
      q_[t].assign(static_cast<size_t>(K) * K, beta / K);
      for (int i = 0; i < K; ++i) q_[t][static_cast<size_t>(i) * K + i] += 1.0 - beta;
      qbar_[t] = multiply(qbar_[t - 1], q_[t]);
    }
  }

  int categories() const { return K_; }
  int steps() const { return T_; }

  // Row-major K x K single-step kernel, t in [1, T].
  const std::vector<double>& q(int t) const {
    if (t < 1 || t > T_) throw std::out_of_range("CategoricalKernel::q: step out of range");
    return q_[t];
  }

  // Row-major K x K cumulative kernel Q_1 ... Q_t, t in [0, T].
  const std::vector<double>& q_bar(int t) const {
    if (t < 0 || t > T_) throw std::out_of_range("CategoricalKernel::q_bar: step out of range");
    return qbar_[t];
  }

 private:
  std::vector<double> identity() const {
    std::vector<double> m(static_cast<size_t>(K_) * K_, 0.0);
    for (int i = 0; i < K_; ++i) m[static_cast<size_t>(i) * K_ + i] = 1.0;
    return m;
  }

  std::vector<double> multiply(const std::vector<double>& a, const std::vector<double>& b) const {
    std::vector<double> c(static_cast<size_t>(K_) * K_, 0.0);
    for (int i = 0; i < K_; ++i)
      for (int p = 0; p < K_; ++p) {
        double av = a[static_cast<size_t>(i) * K_ + p];
        for (int j = 0; j < K_; ++j) c[static_cast<size_t>(i) * K_ + j] += av * b[static_cast<size_t>(p) * K_ + j];
      }
    return c;
  }

  int K_, T_;
  std::vector<std::vector<double>> q_, qbar_;
};

// ---------------------------------------------------------------------------
// Endpoint-pinned mixture bridge. Conditioned on the endpoints (reactant
// category a at step 0, product category b at step T), each slot's state at
// step t is drawn independently from
//   m_t(j) = (1 - mu_t) [ (1 - lambda_t) 1[j=a] + lambda_t 1[j=b] ] + mu_t / K
// with lambda_t = (1 - abar_t) / (1 - abar_T) and mu_t = leak *
// lambda_t (1 - lambda_t). Both mixing weights vanish at the endpoints, so
// the law is exact there. Because states at different steps are independent
// given the endpoints, the reverse posterior marginalized over the model's
// clean-graph distribution is m_{t-1} with the one-hot at `a` replaced by the
// model's distribution.
// ---------------------------------------------------------------------------

struct MixtureLaw {
  double lambda = 0.0;
  double mu = 0.0;
};

inline MixtureLaw bridge_law(const ProcessSchedule& sch, int t, double leak = 0.1) {
  if (t < 0 || t > sch.T) throw std::out_of_range("bridge_law: step out of range");
  double denom = 1.0 - sch.alpha_bars[sch.T];
  double lambda = std::clamp((1.0 - sch.alpha_bars[t]) / denom, 0.0, 1.0);
  return {lambda, leak * lambda * (1.0 - lambda)};
}

inline double mixture_mass(const MixtureLaw& law, int K, int a, int b, int j) {
  double p = law.mu / K;
  if (j == a) p += (1.0 - law.mu) * (1.0 - law.lambda);
  if (j == b) p += (1.0 - law.mu) * law.lambda;
  return p;
}

inline int sample_mixture_slot(const MixtureLaw& law, int K, int a, int b, Rng& rng) {
  double u = rng.uniform();
  if (u < law.mu) return rng.uniform_int(K);
  return rng.uniform() < law.lambda ? b : a;
}

inline MolecularGraph bridge_forward_sample(const MolecularGraph& reactants, const MolecularGraph& product,
                                            int t, const ProcessSchedule& sch, int K_a, int K_b, Rng& rng) {
  if (reactants.n != product.n) throw std::invalid_argument("bridge_forward_sample: graphs must share N");
  if (t < 0 || t > sch.T) throw std::out_of_range("bridge_forward_sample: step out of range");
  if (t == 0) return reactants;
  if (t == sch.T) return product;
  MixtureLaw law = bridge_law(sch, t);
  int N = reactants.n;
  MolecularGraph g(N);
  for (int i = 0; i < N; ++i)
    g.atom_types[i] = sample_mixture_slot(law, K_a, reactants.atom_types[i], product.atom_types[i], rng);
  for (int i = 0; i < N; ++i)
    for (int j = i + 1; j < N; ++j)
      g.set_bond(i, j, sample_mixture_slot(law, K_b, reactants.bond(i, j), product.bond(i, j), rng));
  g.set_mask_from_atoms();
  return g;
}

// Per-slot categorical distributions over the clean graph, as produced by the
// denoiser heads. `bond` is dense N x N x K_b and symmetric across (i, j).
struct GraphProbs {
  int N = 0, K_a = 0, K_b = 0;
  std::vector<double> atom;
  std::vector<double> bond;

  const double* atom_row(int i) const { return atom.data() + static_cast<size_t>(i) * K_a; }
  const double* bond_row(int i, int j) const {
    return bond.data() + (static_cast<size_t>(i) * N + j) * K_b;
  }
};

namespace detail {

inline void check_normalized(const double* row, int K, double tol, const char* what) {
  double sum = 0;
  for (int k = 0; k < K; ++k) sum += row[k];
  if (std::abs(sum - 1.0) > tol)
    throw std::invalid_argument(std::string("reverse_step: unnormalized ") + what + " distribution");
}

inline int sample_row(const double* row, int K, Rng& rng) {
  double sum = 0;
  for (int k = 0; k < K; ++k) sum += row[k];
  double u = rng.uniform() * sum;
  double acc = 0;
  for (int k = 0; k < K; ++k) {
    acc += row[k];
    if (u < acc) return k;
  }
  return K - 1;
}

}  // namespace detail

// Samples G_{t-1} given the model's clean-graph distributions and the pinned
// product endpoint. At t = 1 this reduces to sampling the model distribution
// directly. G_t only participates through shape checks: conditioned on the
// endpoints the mixture states at different steps are independent.
inline MolecularGraph reverse_step(const GraphProbs& probs, const MolecularGraph& G_t,
                                   const MolecularGraph& product, int t, const ProcessSchedule& sch,
                                   Rng& rng, double tol = 1e-4) {
  if (t < 1 || t > sch.T) throw std::out_of_range("reverse_step: step out of range");
  if (probs.N != product.n || G_t.n != product.n)
    throw std::invalid_argument("reverse_step: shape mismatch");
  int N = probs.N;
  for (int i = 0; i < N; ++i) detail::check_normalized(probs.atom_row(i), probs.K_a, tol, "atom");
  for (int i = 0; i < N; ++i)
    for (int j = i + 1; j < N; ++j) detail::check_normalized(probs.bond_row(i, j), probs.K_b, tol, "bond");

  MixtureLaw law = bridge_law(sch, t - 1);
  MolecularGraph g(N);

  auto sample_slot = [&](const double* row, int K, int b) {
    double u = rng.uniform();
    if (u < law.mu) return rng.uniform_int(K);
    if (rng.uniform() < law.lambda) return b;
    return detail::sample_row(row, K, rng);
  };

  for (int i = 0; i < N; ++i)
    g.atom_types[i] = sample_slot(probs.atom_row(i), probs.K_a, product.atom_types[i]);
  for (int i = 0; i < N; ++i)
    for (int j = i + 1; j < N; ++j)
      g.set_bond(i, j, sample_slot(probs.bond_row(i, j), probs.K_b, product.bond(i, j)));
  g.set_mask_from_atoms();
  return g;
}

// One D3PM draw from row (z0 - 1) of the cumulative 10-way kernel. Classes
// are 1-based on both ends.
inline int corrupt_token_discrete(int z0, int t, const CategoricalKernel& kernel, Rng& rng) {
  if (z0 < 1 || z0 > kernel.categories())
    throw std::invalid_argument("corrupt_token_discrete: class out of range");
  if (t < 0 || t > kernel.steps()) throw std::out_of_range("corrupt_token_discrete: step out of range");
  const double* row = kernel.q_bar(t).data() + static_cast<size_t>(z0 - 1) * kernel.categories();
  return detail::sample_row(row, kernel.categories(), rng) + 1;
}

// Gaussian corruption of a unit vector: z_t = sqrt(abar_t) z0 + sqrt(1-abar_t) eps.
inline std::vector<double> corrupt_token_continuous(const std::vector<double>& z0, int t,
                                                    const ProcessSchedule& sch, Rng& rng) {
  if (t < 0 || t > sch.T) throw std::out_of_range("corrupt_token_continuous: step out of range");
  double a = std::sqrt(sch.alpha_bars[t]);
  double b = std::sqrt(1.0 - sch.alpha_bars[t]);
  std::vector<double> z(z0.size());
  for (size_t i = 0; i < z0.size(); ++i) z[i] = a * z0[i] + (b == 0.0 ? 0.0 : b * rng.normal());
  return z;
}

}  // namespace bridgekit
