#include "pmdlab/actor.hpp"

#include <cmath>
#include <stdexcept>

#include "pmdlab/oracle.hpp"

namespace pmdlab {

std::optional<std::string> ActorConfig::stability_warning() const {
    const double tl = tau * lambda;
    if (tl >= 1.0)
        return "tau*lambda >= 1: stability theorems do not apply to this run";
    if (!(tl > 0.0)) return "tau*lambda <= 0: stability theorems do not apply to this run";
    return std::nullopt;
}

PolicyLogits mirror_step(const PolicyLogits& policy, const Matrix& a_hat,
                         const ActorConfig& config) {
    if (!(config.lambda > 0.0)) throw std::invalid_argument("mirror_step: lambda must be positive");
    if (!a_hat.same_shape(policy.logits()))
        throw std::invalid_argument("mirror_step: advantage shape mismatch");
    if (!all_finite(a_hat)) throw std::invalid_argument("mirror_step: advantage not finite");

    for (std::size_t s = 0; s < policy.n_states(); ++s) {
        double mean = 0.0, scale = 0.0;
        for (std::size_t a = 0; a < policy.n_actions(); ++a) {
            mean += a_hat(s, a) * policy.probabilities()(s, a);
            scale = std::max(scale, std::abs(a_hat(s, a)));
        }
        // tolerance is relative to the advantage's own scale, so centred
        // inputs pass at any magnitude while constant offsets are caught
        if (std::abs(mean) > 1e-8 * (1.0 + scale))
            throw std::invalid_argument("mirror_step: advantage is not pi-mean-zero per state");
    }

    Matrix f = policy.logits();
    for (std::size_t s = 0; s < policy.n_states(); ++s)
        for (std::size_t a = 0; a < policy.n_actions(); ++a)
            f(s, a) -= config.lambda * a_hat(s, a);
    return PolicyLogits(std::move(f), policy.mu());
}

double gtilde_objective(const FiniteMdp& mdp, const PolicyLogits& candidate,
                        const PolicyLogits& base, const CriticState& theta,
                        const FeatureMap& features, const ActorConfig& config) {
    if (!(config.lambda > 0.0))
        throw std::invalid_argument("gtilde_objective: lambda must be positive");
    const auto [q_hat, a_hat] = approx_q_and_advantage(theta, features, base, mdp);
    const numvec d_base = state_occupancy(mdp, base, mdp.rho);
    const KlDivergences kl = kl_divergences(candidate, base, mdp);

    double objective = 0.0;
    for (std::size_t s = 0; s < mdp.n_states; ++s) {
        double linear = 0.0;
        for (std::size_t a = 0; a < mdp.n_actions; ++a)
            linear += a_hat(s, a) * candidate.probabilities()(s, a);
        objective += (linear + kl.kl_p_q[s] / config.lambda) * d_base[s];
    }
    return objective;
}

}  // namespace pmdlab
