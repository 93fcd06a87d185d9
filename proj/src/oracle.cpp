#include "pmdlab/oracle.hpp"

#include <cmath>
#include <stdexcept>

namespace pmdlab {

namespace {

/// P_pi(s, s') = sum_a pi(a|s) P(s'|s,a)
Matrix policy_kernel(const FiniteMdp& m, const PolicyLogits& policy) {
    Matrix p(m.n_states, m.n_states, 0.0);
    for (std::size_t s = 0; s < m.n_states; ++s)
        for (std::size_t a = 0; a < m.n_actions; ++a) {
            const double w = policy.probabilities()(s, a);
            if (w == 0.0) continue;
            const std::size_t row = m.sa_index(s, a);
            for (std::size_t sp = 0; sp < m.n_states; ++sp)
                p(s, sp) += w * m.transition(row, sp);
        }
    return p;
}

}  // namespace

PolicyEvaluation evaluate_policy(const FiniteMdp& m, const PolicyLogits& policy) {
    const std::size_t S = m.n_states, A = m.n_actions;
    const LogDensityStats stats = log_density_stats(policy);
    const Matrix p_pi = policy_kernel(m, policy);

    numvec rhs(S, 0.0);
    for (std::size_t s = 0; s < S; ++s) {
        double c_pi = 0.0;
        for (std::size_t a = 0; a < A; ++a) c_pi += m.cost(s, a) * policy.probabilities()(s, a);
        rhs[s] = c_pi + m.tau * stats.kl_to_mu[s];
    }

    Matrix system(S, S, 0.0);
    for (std::size_t s = 0; s < S; ++s) {
        system(s, s) = 1.0;
        for (std::size_t sp = 0; sp < S; ++sp) system(s, sp) -= m.gamma * p_pi(s, sp);
    }

    PolicyEvaluation out;
    out.v = lu_solve(system, rhs);
    out.kl_term = stats.kl_to_mu;

    double residual = 0.0;
    for (std::size_t s = 0; s < S; ++s) {
        double r = out.v[s] - rhs[s];
        for (std::size_t sp = 0; sp < S; ++sp) r -= m.gamma * p_pi(s, sp) * out.v[sp];
        residual = std::max(residual, std::abs(r));
    }
    if (residual > 1e-10 * (1.0 + sup_norm(out.v)))
        throw std::runtime_error("evaluate_policy: linear solve residual too large");

    out.q = Matrix(S, A);
    out.advantage = Matrix(S, A);
    for (std::size_t s = 0; s < S; ++s)
        for (std::size_t a = 0; a < A; ++a) {
            double future = 0.0;
            const std::size_t row = m.sa_index(s, a);
            for (std::size_t sp = 0; sp < S; ++sp) future += m.transition(row, sp) * out.v[sp];
            out.q(s, a) = m.cost(s, a) + m.gamma * future;
            out.advantage(s, a) = out.q(s, a) + m.tau * policy.log_density()(s, a) - out.v[s];
        }
    return out;
}

Matrix bellman_apply(const FiniteMdp& m, const PolicyLogits& policy, const Matrix& f) {
    if (!all_finite(f)) throw std::invalid_argument("bellman_apply: input not finite");
    const std::size_t S = m.n_states, A = m.n_actions;
    const LogDensityStats stats = log_density_stats(policy);

    // per-state policy average of f plus the KL surcharge at the next state
    numvec next_value(S, 0.0);
    for (std::size_t sp = 0; sp < S; ++sp) {
        double avg = 0.0;
        for (std::size_t ap = 0; ap < A; ++ap) avg += f(sp, ap) * policy.probabilities()(sp, ap);
        next_value[sp] = avg + m.tau * stats.kl_to_mu[sp];
    }

    Matrix out(S, A);
    for (std::size_t s = 0; s < S; ++s)
        for (std::size_t a = 0; a < A; ++a) {
            double future = 0.0;
            const std::size_t row = m.sa_index(s, a);
            for (std::size_t sp = 0; sp < S; ++sp) future += m.transition(row, sp) * next_value[sp];
            out(s, a) = m.cost(s, a) + m.gamma * future;
        }
    return out;
}

OptimalSolution solve_optimal(const FiniteMdp& m, double tol) {
    if (!(tol > 0.0)) throw std::invalid_argument("solve_optimal: tol must be positive");
    const std::size_t S = m.n_states, A = m.n_actions;

    numvec v(S, 0.0);
    numvec fresh(S, 0.0);
    Matrix q(S, A);
    numvec scaled(A, 0.0);
    std::size_t iterations = 0;
    const std::size_t max_iterations = 100000000;

    while (true) {
        ++iterations;
        double change = 0.0;
        for (std::size_t s = 0; s < S; ++s) {
            for (std::size_t a = 0; a < A; ++a) {
                double future = 0.0;
                const std::size_t row = m.sa_index(s, a);
                for (std::size_t sp = 0; sp < S; ++sp) future += m.transition(row, sp) * v[sp];
                q(s, a) = m.cost(s, a) + m.gamma * future;
                scaled[a] = -q(s, a) / m.tau;
            }
            fresh[s] = -m.tau * weighted_logsumexp(scaled, m.mu);
            change = std::max(change, std::abs(fresh[s] - v[s]));
        }
        v = fresh;
        if (change <= tol * (1.0 - m.gamma)) break;
        if (iterations >= max_iterations)
            throw std::runtime_error("solve_optimal: iteration cap exceeded");
    }

    // Final consistent Q from the converged V, and pi* via logits -Q*/tau.
    Matrix f(S, A);
    for (std::size_t s = 0; s < S; ++s)
        for (std::size_t a = 0; a < A; ++a) {
            double future = 0.0;
            const std::size_t row = m.sa_index(s, a);
            for (std::size_t sp = 0; sp < S; ++sp) future += m.transition(row, sp) * v[sp];
            q(s, a) = m.cost(s, a) + m.gamma * future;
            f(s, a) = -q(s, a) / m.tau;
        }

    OptimalSolution out{std::move(v), std::move(q), PolicyLogits(std::move(f), m.mu), iterations};
    return out;
}

numvec state_occupancy(const FiniteMdp& m, const PolicyLogits& policy, const numvec& initial) {
    const std::size_t S = m.n_states;
    if (initial.size() != S) throw std::invalid_argument("state_occupancy: bad initial law");
    const Matrix p_pi = policy_kernel(m, policy);

    // (I - gamma P_pi^T) d = (1-gamma) initial
    Matrix system(S, S, 0.0);
    for (std::size_t s = 0; s < S; ++s) {
        system(s, s) = 1.0;
        for (std::size_t sp = 0; sp < S; ++sp) system(s, sp) -= m.gamma * p_pi(sp, s);
    }
    numvec rhs(S);
    for (std::size_t s = 0; s < S; ++s) rhs[s] = (1.0 - m.gamma) * initial[s];
    return lu_solve(system, rhs);
}

OccupancyMeasures occupancies(const FiniteMdp& m, const PolicyLogits& policy) {
    const std::size_t S = m.n_states, A = m.n_actions, SA = m.sa_count();

    OccupancyMeasures out;
    out.d_state = state_occupancy(m, policy, m.rho);

    // State-action kernel P^pi((s,a) -> (s',a')) = P(s'|s,a) pi(a'|s').
    // Solve (I - gamma (P^pi)^T) d = (1-gamma) beta on the flattened space.
    Matrix system(SA, SA, 0.0);
    for (std::size_t i = 0; i < SA; ++i) system(i, i) = 1.0;
    for (std::size_t s = 0; s < S; ++s)
        for (std::size_t a = 0; a < A; ++a) {
            const std::size_t from = m.sa_index(s, a);
            for (std::size_t sp = 0; sp < S; ++sp) {
                const double p = m.transition(from, sp);
                if (p == 0.0) continue;
                for (std::size_t ap = 0; ap < A; ++ap) {
                    const std::size_t to = m.sa_index(sp, ap);
                    system(to, from) -= m.gamma * p * policy.probabilities()(sp, ap);
                }
            }
        }
    numvec rhs(SA);
    for (std::size_t s = 0; s < S; ++s)
        for (std::size_t a = 0; a < A; ++a)
            rhs[m.sa_index(s, a)] = (1.0 - m.gamma) * m.beta(s, a);
    const numvec d_sa = lu_solve(system, rhs);

    out.d_state_action = Matrix(S, A);
    for (std::size_t s = 0; s < S; ++s)
        for (std::size_t a = 0; a < A; ++a) out.d_state_action(s, a) = d_sa[m.sa_index(s, a)];

    double sum_state = 0.0, sum_sa = 0.0;
    for (double x : out.d_state) sum_state += x;
    for (double x : out.d_state_action.data()) sum_sa += x;
    if (std::abs(sum_state - 1.0) > 1e-10 || std::abs(sum_sa - 1.0) > 1e-10)
        throw std::runtime_error("occupancies: mass not conserved");
    return out;
}

PerformanceDifference performance_difference(const FiniteMdp& m, const PolicyLogits& p,
                                             const PolicyLogits& q) {
    const std::size_t S = m.n_states, A = m.n_actions;
    const PolicyEvaluation eval_p = evaluate_policy(m, p);
    const PolicyEvaluation eval_q = evaluate_policy(m, q);
    const numvec d_p = state_occupancy(m, p, m.rho);
    const KlDivergences kl = kl_divergences(p, q, m);

    PerformanceDifference out;
    for (std::size_t s = 0; s < S; ++s)
        out.lhs += (eval_p.v[s] - eval_q.v[s]) * m.rho[s];

    for (std::size_t s = 0; s < S; ++s) {
        double inner = 0.0;
        for (std::size_t a = 0; a < A; ++a) {
            const double diff = p.probabilities()(s, a) - q.probabilities()(s, a);
            inner += (eval_q.q(s, a) + m.tau * q.log_density()(s, a)) * diff;
        }
        inner += m.tau * kl.kl_p_q[s];
        out.rhs += inner * d_p[s];
    }
    out.rhs /= (1.0 - m.gamma);
    return out;
}

nlohmann::json evaluation_to_json(const PolicyEvaluation& eval) {
    nlohmann::json j;
    j["v"] = eval.v;
    j["kl_term"] = eval.kl_term;
    nlohmann::json q = nlohmann::json::array(), adv = nlohmann::json::array();
    for (std::size_t s = 0; s < eval.q.rows(); ++s) {
        auto qr = eval.q.row(s);
        auto ar = eval.advantage.row(s);
        q.push_back(numvec(qr.begin(), qr.end()));
        adv.push_back(numvec(ar.begin(), ar.end()));
    }
    j["q"] = q;
    j["advantage"] = adv;
    return j;
}

nlohmann::json occupancies_to_json(const OccupancyMeasures& occ) {
    nlohmann::json j;
    j["d_state"] = occ.d_state;
    nlohmann::json dsa = nlohmann::json::array();
    for (std::size_t s = 0; s < occ.d_state_action.rows(); ++s) {
        auto row = occ.d_state_action.row(s);
        dsa.push_back(numvec(row.begin(), row.end()));
    }
    j["d_state_action"] = dsa;
    return j;
}

}  // namespace pmdlab
