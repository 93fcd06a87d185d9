#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "pmdlab/linalg.hpp"

namespace pmdlab {

/// Finite entropy-regularised MDP instance. All measures are realised as
/// weighted sums: `transition` holds one probability row over next states per
/// state-action pair (row index s * n_actions + a), `mu` is the full-support
/// reference action measure anchoring the KL regulariser, `rho` the initial
/// state law and `beta` the full-support state-action law used by the critic.
///
/// Instances are immutable values after construction; every operation in this
/// library is a pure function over them.
struct FiniteMdp {
    std::size_t n_states = 0;
    std::size_t n_actions = 0;
    Matrix transition;  // (S*A) x S
    Matrix cost;        // S x A
    double gamma = 0.0;
    double tau = 0.0;
    numvec mu;    // A
    numvec rho;   // S
    Matrix beta;  // S x A

    std::size_t sa_index(std::size_t s, std::size_t a) const { return s * n_actions + a; }
    std::size_t sa_count() const { return n_states * n_actions; }

    /// |c|_inf over all state-action pairs.
    double cost_sup() const { return sup_norm(cost); }
};

struct ValidationReport {
    bool passed = true;
    std::vector<std::string> violations;
};

/// Checks every structural invariant of the instance (probability rows sum to
/// one, full support of mu and beta, gamma in (0,1), tau > 0, finite costs)
/// and reports all violations instead of stopping at the first.
ValidationReport validate_mdp(const FiniteMdp& instance);

/// Policy in the admissible class: pi(da|s) proportional to exp(f(s,a)) mu(da)
/// for bounded logits f. The normalised log-density log dpi/dmu is cached at
/// construction via a max-shifted log-sum-exp, so the representation stays
/// finite for any bounded f and is invariant to state-dependent shifts of f.
class PolicyLogits {
  public:
    /// Throws std::invalid_argument("logits not bounded") on non-finite f.
    PolicyLogits(Matrix f, numvec mu);

    const Matrix& logits() const { return f_; }
    const Matrix& log_density() const { return log_density_; }
    /// pi(a|s) as exact probabilities, exp(log dpi/dmu(s,a)) * mu(a).
    const Matrix& probabilities() const { return prob_; }
    const numvec& mu() const { return mu_; }
    std::size_t n_states() const { return f_.rows(); }
    std::size_t n_actions() const { return f_.cols(); }

    /// Reference policy (f identically zero, i.e. pi = mu per state).
    static PolicyLogits reference(std::size_t n_states, const numvec& mu);

  private:
    Matrix f_;
    Matrix log_density_;
    Matrix prob_;
    numvec mu_;
};

/// Normalised log-density statistics: l(s,a) = log dpi/dmu(s,a) centred to
/// zero mu-mean per state, its sup norm, the per-state KL(pi(.|s)|mu) and the
/// sup-state KL.
struct LogDensityStats {
    Matrix l;
    double sup_norm_l = 0.0;
    numvec kl_to_mu;
    double k_sup = 0.0;
};

/// Returns the cached normalised log-density together with derived stats.
std::pair<Matrix, LogDensityStats> log_density(const PolicyLogits& policy, const numvec& mu);

LogDensityStats log_density_stats(const PolicyLogits& policy);

struct KlDivergences {
    numvec kl_p_q;   // per state KL(p|q)
    numvec kl_p_mu;  // per state KL(p|mu)
};

/// Exact per-state KL divergences computed in log-density space,
/// KL(p|q)(s) = sum_a p(a|s) (log dp/dmu - log dq/dmu)(s,a).
KlDivergences kl_divergences(const PolicyLogits& p, const PolicyLogits& q, const FiniteMdp& mdp);

/// max over states of (1/2) sum_a |p(a|s) - q(a|s)|.
double total_variation(const PolicyLogits& p, const PolicyLogits& q);

nlohmann::json mdp_to_json(const FiniteMdp& mdp);
/// Validates probability rows on load; throws std::runtime_error on schema or
/// invariant violations.
FiniteMdp mdp_from_json(const nlohmann::json& j);

}  // namespace pmdlab
