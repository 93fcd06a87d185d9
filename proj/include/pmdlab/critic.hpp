#pragma once

#include <optional>

#include <json.hpp>

#include "pmdlab/mdp.hpp"
#include "pmdlab/oracle.hpp"

namespace pmdlab {

/// Feature map phi : S x A -> R^N stored as an (S*A) x N matrix (row index
/// s * n_actions + a). Rows are rescaled at construction so that
/// max_(s,a) |phi(s,a)|_2 <= 1; the applied factor is recorded.
class FeatureMap {
  public:
    explicit FeatureMap(Matrix phi);

    static FeatureMap one_hot(std::size_t n_states, std::size_t n_actions);

    const Matrix& phi() const { return phi_; }
    std::size_t dim() const { return phi_.cols(); }
    double scale_applied() const { return scale_applied_; }

  private:
    Matrix phi_;
    double scale_applied_ = 1.0;
};

struct CriticState {
    numvec theta;
};

/// Every step-size threshold the stability and convergence guarantees
/// condition on, derived deterministically from (gamma, lambda_beta). The
/// KL-stability threshold is kept in two variants whose derivations disagree
/// on a constant: one with (16 gamma^2, 24 gamma^2) as published, one with the
/// tighter (32 gamma^2, 48 gamma^2); consumers default to the conservative
/// value.
struct StepSizeCertificate {
    double lambda_beta = 0.0;
    double lambda_beta_residual = 0.0;
    double gamma_const = 0.0;            // Gamma = (1-gamma)(1-sqrt(gamma)) lambda_beta
    double h_single_loop = 0.0;          // Gamma / (6 (1+gamma)^2)
    double h_kl_stability = 0.0;         // conservative constants (32, 48)
    double h_kl_stability_stated = 0.0;  // published constants (16, 24)
    double h_doubleloop = 0.0;           // min{ Gamma/(2(1+gamma)), 1/Gamma }
    bool cond_32gamma = false;           // 32 gamma^2 / Gamma^2 < 1
    std::optional<double> tau_lambda;    // set when an actor step is supplied
    bool tau_lambda_ok = false;          // 0 < tau*lambda < 1
};

/// Builds the certificate from the feature second-moment matrix under beta.
/// Throws std::runtime_error when the smallest eigenvalue is not bounded away
/// from zero (the critic's full-rank requirement fails).
StepSizeCertificate build_certificate(const FiniteMdp& mdp, const FeatureMap& features,
                                      std::optional<double> lambda = std::nullopt);

/// q_hat = <theta, phi> and the approximate soft advantage
/// a_hat = q_hat + tau log dpi/dmu - E_pi[q_hat + tau log dpi/dmu | s].
std::pair<Matrix, Matrix> approx_q_and_advantage(const CriticState& theta,
                                                 const FeatureMap& features,
                                                 const PolicyLogits& policy,
                                                 const FiniteMdp& mdp);

struct MsbeResult {
    double msbe = 0.0;
    numvec semi_gradient;
};

/// Mean squared Bellman error under d^pi_beta and its semi-gradient
/// g = int (Q(theta) - T^pi_tau Q(theta)) phi d^pi_beta, both as exact
/// weighted sums.
MsbeResult msbe_and_semigradient(const FiniteMdp& mdp, const PolicyLogits& policy,
                                 const CriticState& theta, const FeatureMap& features);

/// theta - h g. Throws on non-finite g.
CriticState td_step(const CriticState& theta, double h, const numvec& g);

struct ExactThetaResult {
    numvec theta;
    double residual = 0.0;      // max_(s,a) |<theta, phi> - Q^pi_tau|
    bool ridge_fallback = false;
};

/// L2(beta) projection of Q^pi_tau onto the feature span: solves the normal
/// equations Sigma_beta theta = int Q^pi_tau phi dbeta. Falls back to a 1e-12
/// ridge only when the conditioning exceeds 1e12.
ExactThetaResult exact_theta(const FiniteMdp& mdp, const PolicyLogits& policy,
                             const FeatureMap& features);

/// The semi-gradient for a fixed policy as an affine map g(theta) = A theta - b
/// with the occupancy measure d^pi_beta frozen at that policy. The inner TD
/// loop iterates this map; tests cross-check it against msbe_and_semigradient.
struct SemiGradientModel {
    Matrix a_mat;  // N x N
    numvec b_vec;  // N

    numvec eval(const numvec& theta) const;
};

SemiGradientModel semi_gradient_model(const FiniteMdp& mdp, const PolicyLogits& policy,
                                      const FeatureMap& features);

nlohmann::json certificate_to_json(const StepSizeCertificate& cert);
nlohmann::json features_to_json(const FeatureMap& features);
FeatureMap features_from_json(const nlohmann::json& j);

}  // namespace pmdlab
