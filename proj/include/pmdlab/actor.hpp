#pragma once

#include <optional>
#include <string>

#include "pmdlab/critic.hpp"
#include "pmdlab/mdp.hpp"

namespace pmdlab {

struct ActorConfig {
    double lambda = 0.0;  // actor step size
    double tau = 0.0;     // regularisation weight, copied from the instance

    /// The stability theorems require 0 < tau*lambda < 1; outside that range
    /// the step is still well defined, so callers get a warning instead of a
    /// rejection.
    std::optional<std::string> stability_warning() const;
};

/// Closed-form mirror-descent step: the minimiser of the linearised advantage
/// plus (1/lambda) KL(.|pi) is the exponential tilt with logits f - lambda
/// a_hat; the per-state normaliser is absorbed by gauge invariance.
/// Requires a_hat to be pi-mean-zero per state within 1e-8.
PolicyLogits mirror_step(const PolicyLogits& policy, const Matrix& a_hat,
                         const ActorConfig& config);

/// The surrogate objective the mirror step minimises:
/// sum_s d^base_rho(s) [ sum_a a_hat(s,a) candidate(a|s)
///                       + (1/lambda) KL(candidate|base)(s) ].
double gtilde_objective(const FiniteMdp& mdp, const PolicyLogits& candidate,
                        const PolicyLogits& base, const CriticState& theta,
                        const FeatureMap& features, const ActorConfig& config);

}  // namespace pmdlab
