#include "pmdlab/mdp.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace pmdlab {

namespace {

constexpr double kProbTol = 1e-12;

bool is_probability_vector(std::span<const double> v, double tol, double* sum_out = nullptr) {
    double sum = 0.0;
    for (double x : v) {
        if (!(x >= 0.0)) return false;
        sum += x;
    }
    if (sum_out) *sum_out = sum;
    return std::abs(sum - 1.0) <= tol;
}

}  // namespace

ValidationReport validate_mdp(const FiniteMdp& m) {
    ValidationReport report;
    auto fail = [&report](const std::string& why) {
        report.passed = false;
        report.violations.push_back(why);
    };

    if (m.n_states == 0) fail("n_states must be positive");
    if (m.n_actions == 0) fail("n_actions must be positive");
    if (m.transition.rows() != m.sa_count() || m.transition.cols() != m.n_states)
        fail("transition kernel has wrong shape");
    if (m.cost.rows() != m.n_states || m.cost.cols() != m.n_actions)
        fail("cost matrix has wrong shape");
    if (m.mu.size() != m.n_actions) fail("reference measure has wrong length");
    if (m.rho.size() != m.n_states) fail("initial state law has wrong length");
    if (m.beta.rows() != m.n_states || m.beta.cols() != m.n_actions)
        fail("critic sampling law has wrong shape");
    if (!report.passed) return report;

    for (std::size_t s = 0; s < m.n_states; ++s) {
        for (std::size_t a = 0; a < m.n_actions; ++a) {
            if (!is_probability_vector(m.transition.row(m.sa_index(s, a)), kProbTol)) {
                std::ostringstream os;
                os << "transition row (s=" << s << ", a=" << a
                   << ") is not a probability vector";
                fail(os.str());
            }
            if (!std::isfinite(m.cost(s, a))) fail("cost entries must be finite");
        }
    }
    if (!is_probability_vector(m.mu, kProbTol)) fail("reference measure is not a probability vector");
    for (double x : m.mu)
        if (!(x > 0.0)) {
            fail("reference measure lacks full support");
            break;
        }
    if (!is_probability_vector(m.rho, kProbTol)) fail("initial state law is not a probability vector");
    {
        double sum = 0.0;
        bool nonneg = true, positive = true;
        for (double x : m.beta.data()) {
            if (!(x >= 0.0)) nonneg = false;
            if (!(x > 0.0)) positive = false;
            sum += x;
        }
        if (!nonneg || std::abs(sum - 1.0) > kProbTol)
            fail("critic sampling law is not a probability vector");
        else if (!positive)
            fail("critic sampling law lacks full support");
    }
    if (!(m.gamma > 0.0 && m.gamma < 1.0)) fail("discount not in (0,1)");
    if (!(m.tau > 0.0) || !std::isfinite(m.tau)) fail("regularisation weight must be positive");

    return report;
}

PolicyLogits::PolicyLogits(Matrix f, numvec mu) : f_(std::move(f)), mu_(std::move(mu)) {
    if (!all_finite(f_)) throw std::invalid_argument("logits not bounded");
    if (f_.cols() != mu_.size()) throw std::invalid_argument("logits/mu dimension mismatch");

    const std::size_t S = f_.rows(), A = f_.cols();
    log_density_ = Matrix(S, A);
    prob_ = Matrix(S, A);
    for (std::size_t s = 0; s < S; ++s) {
        const double log_z = weighted_logsumexp(f_.row(s), mu_);
        double mass = 0.0;
        for (std::size_t a = 0; a < A; ++a) {
            log_density_(s, a) = f_(s, a) - log_z;
            prob_(s, a) = std::exp(log_density_(s, a)) * mu_[a];
            mass += prob_(s, a);
        }
        // exact unit mass: at large logit scales the f - log_z rounding
        // leaves ~ulp(f) in the row sum, which downstream resolvent solves
        // would amplify by 1/(1-gamma)
        for (std::size_t a = 0; a < A; ++a) prob_(s, a) /= mass;
    }
}

PolicyLogits PolicyLogits::reference(std::size_t n_states, const numvec& mu) {
    return PolicyLogits(Matrix(n_states, mu.size(), 0.0), mu);
}

LogDensityStats log_density_stats(const PolicyLogits& policy) {
    const Matrix& logd = policy.log_density();
    const Matrix& prob = policy.probabilities();
    const numvec& mu = policy.mu();
    const std::size_t S = logd.rows(), A = logd.cols();

    LogDensityStats out;
    out.l = Matrix(S, A);
    out.kl_to_mu.assign(S, 0.0);
    for (std::size_t s = 0; s < S; ++s) {
        double mean = 0.0;
        for (std::size_t a = 0; a < A; ++a) mean += logd(s, a) * mu[a];
        double kl = 0.0;
        for (std::size_t a = 0; a < A; ++a) {
            out.l(s, a) = logd(s, a) - mean;
            out.sup_norm_l = std::max(out.sup_norm_l, std::abs(out.l(s, a)));
            kl += logd(s, a) * prob(s, a);
        }
        out.kl_to_mu[s] = kl;
        out.k_sup = std::max(out.k_sup, kl);
    }
    return out;
}

std::pair<Matrix, LogDensityStats> log_density(const PolicyLogits& policy, const numvec& mu) {
    if (mu.size() != policy.mu().size())
        throw std::invalid_argument("log_density: mu dimension mismatch");
    for (double x : mu)
        if (!(x > 0.0)) throw std::invalid_argument("log_density: mu must have full support");
    return {policy.log_density(), log_density_stats(policy)};
}

KlDivergences kl_divergences(const PolicyLogits& p, const PolicyLogits& q, const FiniteMdp& mdp) {
    if (p.n_states() != q.n_states() || p.n_actions() != q.n_actions())
        throw std::invalid_argument("kl_divergences: policies on different spaces");
    const std::size_t S = mdp.n_states, A = mdp.n_actions;
    KlDivergences out;
    out.kl_p_q.assign(S, 0.0);
    out.kl_p_mu.assign(S, 0.0);
    for (std::size_t s = 0; s < S; ++s) {
        double kpq = 0.0, kpm = 0.0;
        for (std::size_t a = 0; a < A; ++a) {
            const double w = p.probabilities()(s, a);
            kpq += w * (p.log_density()(s, a) - q.log_density()(s, a));
            kpm += w * p.log_density()(s, a);
        }
        out.kl_p_q[s] = kpq;
        out.kl_p_mu[s] = kpm;
    }
    return out;
}

double total_variation(const PolicyLogits& p, const PolicyLogits& q) {
    double worst = 0.0;
    for (std::size_t s = 0; s < p.n_states(); ++s) {
        double tv = 0.0;
        for (std::size_t a = 0; a < p.n_actions(); ++a)
            tv += std::abs(p.probabilities()(s, a) - q.probabilities()(s, a));
        worst = std::max(worst, 0.5 * tv);
    }
    return worst;
}

nlohmann::json mdp_to_json(const FiniteMdp& m) {
    nlohmann::json j;
    j["n_states"] = m.n_states;
    j["n_actions"] = m.n_actions;
    j["gamma"] = m.gamma;
    j["tau"] = m.tau;

    nlohmann::json trans = nlohmann::json::array();
    for (std::size_t s = 0; s < m.n_states; ++s) {
        nlohmann::json per_action = nlohmann::json::array();
        for (std::size_t a = 0; a < m.n_actions; ++a) {
            auto row = m.transition.row(m.sa_index(s, a));
            per_action.push_back(numvec(row.begin(), row.end()));
        }
        trans.push_back(per_action);
    }
    j["transition"] = trans;

    nlohmann::json cost = nlohmann::json::array();
    for (std::size_t s = 0; s < m.n_states; ++s) {
        auto row = m.cost.row(s);
        cost.push_back(numvec(row.begin(), row.end()));
    }
    j["cost"] = cost;
    j["mu"] = m.mu;
    j["rho"] = m.rho;

    nlohmann::json beta = nlohmann::json::array();
    for (std::size_t s = 0; s < m.n_states; ++s) {
        auto row = m.beta.row(s);
        beta.push_back(numvec(row.begin(), row.end()));
    }
    j["beta"] = beta;
    return j;
}

FiniteMdp mdp_from_json(const nlohmann::json& j) {
    FiniteMdp m;
    try {
        m.n_states = j.at("n_states").get<std::size_t>();
        m.n_actions = j.at("n_actions").get<std::size_t>();
        m.gamma = j.at("gamma").get<double>();
        m.tau = j.at("tau").get<double>();

        m.transition = Matrix(m.n_states * m.n_actions, m.n_states);
        const auto& trans = j.at("transition");
        for (std::size_t s = 0; s < m.n_states; ++s)
            for (std::size_t a = 0; a < m.n_actions; ++a) {
                const auto row = trans.at(s).at(a).get<numvec>();
                if (row.size() != m.n_states)
                    throw std::runtime_error("transition row has wrong length");
                for (std::size_t sp = 0; sp < m.n_states; ++sp)
                    m.transition(m.sa_index(s, a), sp) = row[sp];
            }

        m.cost = Matrix(m.n_states, m.n_actions);
        const auto& cost = j.at("cost");
        for (std::size_t s = 0; s < m.n_states; ++s) {
            const auto row = cost.at(s).get<numvec>();
            if (row.size() != m.n_actions) throw std::runtime_error("cost row has wrong length");
            for (std::size_t a = 0; a < m.n_actions; ++a) m.cost(s, a) = row[a];
        }

        m.mu = j.at("mu").get<numvec>();
        m.rho = j.at("rho").get<numvec>();

        m.beta = Matrix(m.n_states, m.n_actions);
        const auto& beta = j.at("beta");
        for (std::size_t s = 0; s < m.n_states; ++s) {
            const auto row = beta.at(s).get<numvec>();
            if (row.size() != m.n_actions) throw std::runtime_error("beta row has wrong length");
            for (std::size_t a = 0; a < m.n_actions; ++a) m.beta(s, a) = row[a];
        }
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("instance JSON malformed: ") + e.what());
    }

    const ValidationReport report = validate_mdp(m);
    if (!report.passed) {
        std::string msg = "instance failed validation:";
        for (const auto& v : report.violations) msg += "\n  - " + v;
        throw std::runtime_error(msg);
    }
    return m;
}

}  // namespace pmdlab
