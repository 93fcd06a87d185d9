#pragma once

#include <json.hpp>

#include "pmdlab/mdp.hpp"

namespace pmdlab {

/// Exact evaluation of a fixed policy: V solves the on-policy Bellman linear
/// system, Q = c + gamma P V and the soft advantage is Q + tau log dpi/dmu - V.
struct PolicyEvaluation {
    numvec v;          // S
    Matrix q;          // S x A
    Matrix advantage;  // S x A
    numvec kl_term;    // per-state KL(pi(.|s)|mu)
};

struct OccupancyMeasures {
    numvec d_state;        // d^pi_rho over S
    Matrix d_state_action; // d^pi_beta over S x A
};

struct OptimalSolution {
    numvec v_star;         // S
    Matrix q_star;         // S x A
    PolicyLogits pi_star;  // logits -Q*/tau (state-dependent shift immaterial)
    std::size_t iterations = 0;
};

struct PerformanceDifference {
    double lhs = 0.0;
    double rhs = 0.0;
};

/// Solves (I - gamma P_pi) V = c_pi + tau KL_pi by a direct linear solve and
/// derives Q and the advantage. Throws std::runtime_error if the solve
/// residual exceeds 1e-10 (1 + |V|_inf), which cannot happen for gamma < 1.
PolicyEvaluation evaluate_policy(const FiniteMdp& mdp, const PolicyLogits& policy);

/// One application of the regularised Bellman operator T^pi_tau to f.
Matrix bellman_apply(const FiniteMdp& mdp, const PolicyLogits& policy, const Matrix& f);

/// Soft value iteration V <- -tau log int exp(-Q/tau) dmu, stopped when the
/// sup-change falls below tol * (1 - gamma) so the result is within tol of the
/// fixed point in sup norm. Throws std::invalid_argument for tol <= 0.
OptimalSolution solve_optimal(const FiniteMdp& mdp, double tol = 1e-12);

/// Discounted state occupancy started from an arbitrary initial law.
numvec state_occupancy(const FiniteMdp& mdp, const PolicyLogits& policy, const numvec& initial);

/// d^pi_rho and d^pi_beta via direct solves of the transposed resolvent
/// systems; both are asserted to sum to one within 1e-10.
OccupancyMeasures occupancies(const FiniteMdp& mdp, const PolicyLogits& policy);

/// Both sides of the performance-difference identity
/// V^p(rho) - V^q(rho) = (1/(1-gamma)) int [ (Q^q + tau log dq/dmu)(p - q)
/// + tau KL(p|q) ] d^p_rho, each computed independently.
PerformanceDifference performance_difference(const FiniteMdp& mdp, const PolicyLogits& p,
                                             const PolicyLogits& q);

nlohmann::json evaluation_to_json(const PolicyEvaluation& eval);
nlohmann::json occupancies_to_json(const OccupancyMeasures& occ);

}  // namespace pmdlab
