#include "pmdlab/critic.hpp"

#include <cmath>
#include <stdexcept>

namespace pmdlab {

FeatureMap::FeatureMap(Matrix phi) : phi_(std::move(phi)) {
    if (!all_finite(phi_)) throw std::invalid_argument("feature map entries must be finite");
    double max_norm = 0.0;
    for (std::size_t i = 0; i < phi_.rows(); ++i) {
        double sq = 0.0;
        for (std::size_t j = 0; j < phi_.cols(); ++j) sq += phi_(i, j) * phi_(i, j);
        max_norm = std::max(max_norm, std::sqrt(sq));
    }
    if (max_norm > 1.0) {
        for (double& x : phi_.data()) x /= max_norm;
        scale_applied_ = max_norm;
    }
}

FeatureMap FeatureMap::one_hot(std::size_t n_states, std::size_t n_actions) {
    const std::size_t sa = n_states * n_actions;
    Matrix phi(sa, sa, 0.0);
    for (std::size_t i = 0; i < sa; ++i) phi(i, i) = 1.0;
    return FeatureMap(std::move(phi));
}

namespace {

/// Sigma_beta = sum phi phi^T beta(s,a)
Matrix second_moment(const FiniteMdp& m, const FeatureMap& features) {
    const Matrix& phi = features.phi();
    const std::size_t N = features.dim();
    Matrix sigma(N, N, 0.0);
    for (std::size_t s = 0; s < m.n_states; ++s)
        for (std::size_t a = 0; a < m.n_actions; ++a) {
            const double w = m.beta(s, a);
            const std::size_t row = m.sa_index(s, a);
            for (std::size_t i = 0; i < N; ++i) {
                const double wi = w * phi(row, i);
                for (std::size_t j = 0; j < N; ++j) sigma(i, j) += wi * phi(row, j);
            }
        }
    return sigma;
}

}  // namespace

StepSizeCertificate build_certificate(const FiniteMdp& m, const FeatureMap& features,
                                      std::optional<double> lambda) {
    if (features.phi().rows() != m.sa_count())
        throw std::invalid_argument("build_certificate: feature rows do not match instance");

    const SymmetricEigen eig = jacobi_eigensym(second_moment(m, features));

    StepSizeCertificate cert;
    cert.lambda_beta = eig.eigenvalues.front();
    cert.lambda_beta_residual = eig.max_residual;
    if (cert.lambda_beta <= 1e-14)
        throw std::runtime_error("features not full rank under beta (second-moment matrix near-singular)");

    const double g = m.gamma;
    const double gam = (1.0 - g) * (1.0 - std::sqrt(g)) * cert.lambda_beta;
    cert.gamma_const = gam;
    cert.h_single_loop = gam / (6.0 * (1.0 + g) * (1.0 + g));
    cert.h_kl_stability = 0.5 * std::min(gam / (3.0 * (1.0 + g) * (1.0 + g)),
                                  (gam * gam - 32.0 * g * g) /
                                      (gam * (48.0 * g * g + 3.0 * (1.0 + g) * (1.0 + g))));
    cert.h_kl_stability_stated = 0.5 * std::min(gam / (3.0 * (1.0 + g) * (1.0 + g)),
                                         (gam * gam - 16.0 * g * g) /
                                             (gam * (24.0 * g * g + 3.0 * (1.0 + g) * (1.0 + g))));
    cert.h_doubleloop = std::min(gam / (2.0 * (1.0 + g)), 1.0 / gam);
    cert.cond_32gamma = 32.0 * g * g / (gam * gam) < 1.0;
    if (lambda) {
        cert.tau_lambda = m.tau * *lambda;
        cert.tau_lambda_ok = *cert.tau_lambda > 0.0 && *cert.tau_lambda < 1.0;
    }
    return cert;
}

std::pair<Matrix, Matrix> approx_q_and_advantage(const CriticState& theta,
                                                 const FeatureMap& features,
                                                 const PolicyLogits& policy,
                                                 const FiniteMdp& m) {
    if (theta.theta.size() != features.dim())
        throw std::invalid_argument("approx_q_and_advantage: theta dimension mismatch");
    const std::size_t S = m.n_states, A = m.n_actions, N = features.dim();
    const Matrix& phi = features.phi();

    Matrix q_hat(S, A);
    Matrix a_hat(S, A);
    for (std::size_t s = 0; s < S; ++s) {
        double mean = 0.0;
        for (std::size_t a = 0; a < A; ++a) {
            const std::size_t row = m.sa_index(s, a);
            double q = 0.0;
            for (std::size_t j = 0; j < N; ++j) q += theta.theta[j] * phi(row, j);
            q_hat(s, a) = q;
            const double tilted = q + m.tau * policy.log_density()(s, a);
            a_hat(s, a) = tilted;
            mean += tilted * policy.probabilities()(s, a);
        }
        for (std::size_t a = 0; a < A; ++a) a_hat(s, a) -= mean;
    }
    return {std::move(q_hat), std::move(a_hat)};
}

MsbeResult msbe_and_semigradient(const FiniteMdp& m, const PolicyLogits& policy,
                                 const CriticState& theta, const FeatureMap& features) {
    const std::size_t S = m.n_states, A = m.n_actions, N = features.dim();
    const Matrix& phi = features.phi();

    const auto [q_hat, a_hat] = approx_q_and_advantage(theta, features, policy, m);
    const Matrix target = bellman_apply(m, policy, q_hat);
    const OccupancyMeasures occ = occupancies(m, policy);

    MsbeResult out;
    out.semi_gradient.assign(N, 0.0);
    for (std::size_t s = 0; s < S; ++s)
        for (std::size_t a = 0; a < A; ++a) {
            const double r = q_hat(s, a) - target(s, a);
            const double w = occ.d_state_action(s, a);
            out.msbe += 0.5 * r * r * w;
            const std::size_t row = m.sa_index(s, a);
            for (std::size_t j = 0; j < N; ++j) out.semi_gradient[j] += r * w * phi(row, j);
        }
    return out;
}

CriticState td_step(const CriticState& theta, double h, const numvec& g) {
    if (!(h > 0.0)) throw std::invalid_argument("td_step: step size must be positive");
    if (!all_finite(g)) throw std::invalid_argument("td_step: semi-gradient not finite");
    if (g.size() != theta.theta.size()) throw std::invalid_argument("td_step: dimension mismatch");
    CriticState out = theta;
    for (std::size_t j = 0; j < g.size(); ++j) out.theta[j] -= h * g[j];
    return out;
}

ExactThetaResult exact_theta(const FiniteMdp& m, const PolicyLogits& policy,
                             const FeatureMap& features) {
    const std::size_t N = features.dim();
    const Matrix& phi = features.phi();
    const Matrix sigma = second_moment(m, features);
    const SymmetricEigen eig = jacobi_eigensym(sigma);
    if (eig.eigenvalues.front() <= 1e-14)
        throw std::runtime_error("features not full rank under beta (second-moment matrix near-singular)");

    const PolicyEvaluation eval = evaluate_policy(m, policy);
    numvec rhs(N, 0.0);
    for (std::size_t s = 0; s < m.n_states; ++s)
        for (std::size_t a = 0; a < m.n_actions; ++a) {
            const double w = eval.q(s, a) * m.beta(s, a);
            const std::size_t row = m.sa_index(s, a);
            for (std::size_t j = 0; j < N; ++j) rhs[j] += w * phi(row, j);
        }

    ExactThetaResult out;
    Matrix system = sigma;
    if (eig.eigenvalues.back() / eig.eigenvalues.front() > 1e12) {
        for (std::size_t j = 0; j < N; ++j) system(j, j) += 1e-12;
        out.ridge_fallback = true;
    }
    out.theta = lu_solve(system, rhs);

    for (std::size_t s = 0; s < m.n_states; ++s)
        for (std::size_t a = 0; a < m.n_actions; ++a) {
            const std::size_t row = m.sa_index(s, a);
            double fit = 0.0;
            for (std::size_t j = 0; j < N; ++j) fit += out.theta[j] * phi(row, j);
            out.residual = std::max(out.residual, std::abs(fit - eval.q(s, a)));
        }
    return out;
}

numvec SemiGradientModel::eval(const numvec& theta) const {
    numvec g = matvec(a_mat, theta);
    for (std::size_t j = 0; j < g.size(); ++j) g[j] -= b_vec[j];
    return g;
}

SemiGradientModel semi_gradient_model(const FiniteMdp& m, const PolicyLogits& policy,
                                      const FeatureMap& features) {
    const std::size_t S = m.n_states, A = m.n_actions, N = features.dim();
    const Matrix& phi = features.phi();
    const LogDensityStats stats = log_density_stats(policy);
    const OccupancyMeasures occ = occupancies(m, policy);

    // psi(s') = E_{a' ~ pi(.|s')} phi(s',a'), so that the linear part of
    // T^pi_tau Q(theta) at (s,a) is gamma <P(.|s,a), psi theta>.
    Matrix psi(S, N, 0.0);
    for (std::size_t sp = 0; sp < S; ++sp)
        for (std::size_t ap = 0; ap < A; ++ap) {
            const double w = policy.probabilities()(sp, ap);
            if (w == 0.0) continue;
            const std::size_t row = m.sa_index(sp, ap);
            for (std::size_t j = 0; j < N; ++j) psi(sp, j) += w * phi(row, j);
        }

    SemiGradientModel model;
    model.a_mat = Matrix(N, N, 0.0);
    model.b_vec.assign(N, 0.0);
    numvec row_minus_l(N, 0.0);
    for (std::size_t s = 0; s < S; ++s)
        for (std::size_t a = 0; a < A; ++a) {
            const std::size_t row = m.sa_index(s, a);
            const double w = occ.d_state_action(s, a);
            if (w == 0.0) continue;

            double constant = m.cost(s, a);
            for (std::size_t j = 0; j < N; ++j) row_minus_l[j] = phi(row, j);
            double kl_future = 0.0;
            for (std::size_t sp = 0; sp < S; ++sp) {
                const double p = m.transition(row, sp);
                if (p == 0.0) continue;
                kl_future += p * stats.kl_to_mu[sp];
                for (std::size_t j = 0; j < N; ++j) row_minus_l[j] -= m.gamma * p * psi(sp, j);
            }
            constant += m.tau * m.gamma * kl_future;

            for (std::size_t i = 0; i < N; ++i) {
                const double wi = w * phi(row, i);
                for (std::size_t j = 0; j < N; ++j) model.a_mat(i, j) += wi * row_minus_l[j];
                model.b_vec[i] += wi * constant;
            }
        }
    return model;
}

nlohmann::json certificate_to_json(const StepSizeCertificate& cert) {
    nlohmann::json j;
    j["lambda_beta"] = cert.lambda_beta;
    j["lambda_beta_residual"] = cert.lambda_beta_residual;
    j["gamma_const"] = cert.gamma_const;
    j["h_single_loop"] = cert.h_single_loop;
    j["h_kl_stability"] = cert.h_kl_stability;
    j["h_kl_stability_stated"] = cert.h_kl_stability_stated;
    j["h_doubleloop"] = cert.h_doubleloop;
    j["cond_32gamma"] = cert.cond_32gamma;
    if (cert.tau_lambda)
        j["tau_lambda"] = *cert.tau_lambda;
    else
        j["tau_lambda"] = nullptr;
    j["tau_lambda_ok"] = cert.tau_lambda_ok;
    return j;
}

nlohmann::json features_to_json(const FeatureMap& features) {
    nlohmann::json j;
    j["dim"] = features.dim();
    j["scale_applied"] = features.scale_applied();
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t i = 0; i < features.phi().rows(); ++i) {
        auto row = features.phi().row(i);
        rows.push_back(numvec(row.begin(), row.end()));
    }
    j["phi"] = rows;
    return j;
}

FeatureMap features_from_json(const nlohmann::json& j) {
    try {
        const auto rows = j.at("phi");
        const std::size_t n_rows = rows.size();
        if (n_rows == 0) throw std::runtime_error("feature map has no rows");
        const std::size_t dim = j.at("dim").get<std::size_t>();
        Matrix phi(n_rows, dim);
        for (std::size_t i = 0; i < n_rows; ++i) {
            const auto row = rows.at(i).get<numvec>();
            if (row.size() != dim) throw std::runtime_error("feature row has wrong length");
            for (std::size_t k = 0; k < dim; ++k) phi(i, k) = row[k];
        }
        return FeatureMap(std::move(phi));
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("feature JSON malformed: ") + e.what());
    }
}

}  // namespace pmdlab
