#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pmdlab/driver.hpp"

namespace pmdlab {

/// Constants lifted from the convergence proofs, evaluated on the concrete
/// run so the existence-style guarantees become checkable inequalities. The
/// cumulative-error bound and the schedule-constant derivation use different c(gamma)
/// forms, and the concentrability bound appears once as stated and once as the
/// proof normalises it; all variants are kept side by side.
struct ProofConstants {
    double c_gamma_cumulative = 0.0;  // max{1, 2/(1-gamma)}
    double c_gamma_schedule = 0.0;  // max{1, 2*gamma/(1-gamma)}
    double delta1 = 0.0;
    double delta2 = 0.0;
    double schedule_c = 0.0;  // sqrt(8 c(gamma) delta2 / tau), clamped at 1e-6
    bool delta_feasible = false;
    numvec alpha1;        // per update: (sqrt(2) tau gamma |l_n| + gamma |Q^n|) / (1-gamma)
    double alpha2 = 0.0;  // tau gamma / (1-gamma)
    double xi_statement = 0.0;
    double xi_proof = 0.0;  // xi_statement / (1-gamma)
    double kappa = 0.0;     // (xi-1)/xi on the statement form

    // Reporting-only constants from the stability proofs; no check depends on
    // them beyond delta1 / delta2.
    double kappa_h = 0.0;     // 16 gamma^2 (3h + 2/Gamma) / (Gamma - 3h(1+gamma)^2)
    double c1_l0 = 0.0;       // |l_0|_inf
    double c2_h = 0.0;        // C_1^2 + 4|theta0|^2/tau^2 + 4|c|^2 (3h+2/Gamma)/(tau^2 (...))
    double alpha1_schedule = 0.0;   // |c| + gamma |V^{pi^0}| + gamma |V^*|
    numvec beta1, beta2;      // per-n quantities of the logarithmic-growth derivation
    double alpha3 = 0.0;      // sup_n beta2(n)
};

struct CheckReport {
    std::string check_name;
    std::string status;  // "pass" | "fail" | "skipped"
    std::string skip_reason;
    std::optional<std::size_t> first_violation_n;
    double worst_margin = 0.0;     // min over comparisons of rhs - lhs
    double reported_value = 0.0;   // supremum / fitted constant where meaningful
    nlohmann::json details;

    bool failed() const { return status == "fail"; }
};

/// Accumulates lhs <= rhs comparisons under the default tolerance
/// (1e-9 absolute plus 1e-9 relative).
class InequalityCheck {
  public:
    explicit InequalityCheck(std::string name);

    void require(std::size_t n, double lhs, double rhs);
    CheckReport finish() &&;

    static CheckReport skipped(std::string name, std::string reason);

  private:
    CheckReport report_;
    bool any_ = false;
    bool violated_ = false;
};

/// Per-iteration stability certificates: the critic-norm recursion, the
/// log-density recursion, KL(pi|mu) <= 2 |l|_inf, and the running max of
/// K_n + |theta^n| (reported; only existence of a bound is guaranteed).
std::vector<CheckReport> check_stability(const RunTrace& trace, const StepSizeCertificate& cert,
                                         const FiniteMdp& mdp, const FeatureMap& features,
                                         const RunConfig& config);

/// Inner-loop certificates: endpoint linear convergence e^{-M h Gamma},
/// stepwise (1 - h Gamma) contraction and the semi-gradient norm bound at
/// every inner iterate.
std::vector<CheckReport> check_critic(const RunTrace& trace, const StepSizeCertificate& cert,
                                      const FiniteMdp& mdp, const FeatureMap& features,
                                      const RunConfig& config);

/// Value and rate certificates: one-step improvement up to critic error, the
/// cumulative-error bound, the sublinear and linear compensated-rate shapes,
/// Q-function continuity across consecutive policies and the consecutive-KL
/// bound.
std::vector<CheckReport> check_value_and_rates(const RunTrace& trace,
                                               const ProofConstants& constants,
                                               const FiniteMdp& mdp,
                                               const StepSizeCertificate& cert,
                                               const RunConfig& config);

/// xi in both of its readings; +infinity (and skipped downstream checks) when
/// rho misses a state that d^pi*_rho charges.
ProofConstants concentrability(const FiniteMdp& mdp, const PolicyLogits& pi_star);

ProofConstants compute_proof_constants(const FiniteMdp& mdp, const StepSizeCertificate& cert,
                                       const RunConfig& config, const RunTrace& trace,
                                       const PolicyLogits& pi_star);

struct VerificationReport {
    std::vector<CheckReport> checks;
    StepSizeCertificate certificate;
    ProofConstants constants;
    bool all_ok = true;

    int exit_code() const { return all_ok ? 0 : 1; }
};

/// Runs every check family against a completed trace. An aborted trace skips
/// all checks (reason recorded) and fails verification.
VerificationReport verify_run(const FiniteMdp& mdp, const FeatureMap& features,
                              const RunConfig& config, const RunTrace& trace);

nlohmann::json verification_to_json(const VerificationReport& report, const RunTrace& trace);

}  // namespace pmdlab
