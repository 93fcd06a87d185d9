#include "pmdlab/verifier.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace pmdlab {

namespace {

constexpr double kTolAbs = 1e-9;
constexpr double kTolRel = 1e-9;
const double kNan = std::numeric_limits<double>::quiet_NaN();
const double kInf = std::numeric_limits<double>::infinity();

struct CompensatedSequence {
    numvec values;
    double max = -kInf;
    std::size_t argmax = 0;
    bool finite = true;
    bool stabilised = true;
};

/// Stabilisation: the supremum of the compensated sequence is already
/// attained before its last quartile.
CompensatedSequence analyse_sequence(numvec values) {
    CompensatedSequence out;
    out.values = std::move(values);
    for (std::size_t i = 0; i < out.values.size(); ++i) {
        if (!std::isfinite(out.values[i])) out.finite = false;
        if (out.values[i] > out.max) {
            out.max = out.values[i];
            out.argmax = i;
        }
    }
    const std::size_t n = out.values.size();
    if (n >= 8) {
        const std::size_t boundary = (3 * n + 3) / 4;
        double first = -kInf, last = -kInf;
        for (std::size_t i = 0; i < n; ++i) {
            if (i < boundary)
                first = std::max(first, out.values[i]);
            else
                last = std::max(last, out.values[i]);
        }
        out.stabilised = last <= first * (1.0 + 1e-9) + 1e-12;
    }
    return out;
}

}  // namespace

InequalityCheck::InequalityCheck(std::string name) {
    report_.check_name = std::move(name);
    report_.worst_margin = kInf;
}

void InequalityCheck::require(std::size_t n, double lhs, double rhs) {
    any_ = true;
    const double margin = rhs - lhs;
    if (margin < report_.worst_margin) report_.worst_margin = margin;
    const double slack = kTolAbs + kTolRel * std::max(std::abs(lhs), std::abs(rhs));
    const bool bad = !(lhs <= rhs + slack);
    if (bad && !violated_) {
        violated_ = true;
        report_.first_violation_n = n;
    }
}

CheckReport InequalityCheck::finish() && {
    report_.status = violated_ ? "fail" : "pass";
    if (!any_) report_.worst_margin = 0.0;
    return std::move(report_);
}

CheckReport InequalityCheck::skipped(std::string name, std::string reason) {
    CheckReport report;
    report.check_name = std::move(name);
    report.status = "skipped";
    report.skip_reason = std::move(reason);
    return report;
}

std::vector<CheckReport> check_stability(const RunTrace& trace, const StepSizeCertificate& cert,
                                         const FiniteMdp& mdp, const FeatureMap& features,
                                         const RunConfig& config) {
    (void)features;
    std::vector<CheckReport> out;
    const std::size_t N = trace.rows.size();
    const double tau_lambda = mdp.tau * config.lambda;
    const double gam = cert.gamma_const;
    const double g = mdp.gamma;
    const double c_sup = mdp.cost_sup();

    // (a) coupled critic-norm recursion
    if (config.h > cert.h_single_loop) {
        out.push_back(InequalityCheck::skipped(
            "critic_norm_recursion",
            "precondition: h > Gamma/(6(1+gamma)^2)"));
    } else {
        InequalityCheck check("critic_norm_recursion");
        const double denom = gam - 3.0 * config.h * (1.0 + g) * (1.0 + g);
        const double ratio = (3.0 * config.h + 2.0 / gam) / denom;
        const double theta0_sq = dot(config.theta0, config.theta0);
        double running_k_sq = 0.0;
        for (std::size_t n = 0; n < N; ++n) {
            running_k_sq = std::max(running_k_sq, trace.rows[n].k_n * trace.rows[n].k_n);
            const double lhs_norm = norm2(trace.thetas[n + 1]);
            const double rhs = theta0_sq + mdp.tau * mdp.tau * g * g * ratio * running_k_sq +
                               c_sup * c_sup * ratio;
            check.require(n, lhs_norm * lhs_norm, rhs);
        }
        out.push_back(std::move(check).finish());
    }

    // (b) normalised log-density recursion
    if (tau_lambda > 1.0) {
        out.push_back(InequalityCheck::skipped("log_density_recursion",
                                               "precondition: tau*lambda > 1"));
    } else {
        InequalityCheck check("log_density_recursion");
        for (std::size_t n = 0; n < N; ++n) {
            const double l_next = n + 1 < N ? trace.rows[n + 1].l_sup
                                            : log_density_stats(trace.policies[n + 1]).sup_norm_l;
            const double rhs = (1.0 - tau_lambda) * trace.rows[n].l_sup +
                               2.0 * config.lambda * norm2(trace.thetas[n + 1]);
            check.require(n, l_next, rhs);
        }
        out.push_back(std::move(check).finish());
    }

    // (c) KL(pi|mu) <= 2 |l|_inf pointwise
    {
        InequalityCheck check("kl_vs_centred_log_density");
        for (std::size_t n = 0; n < N; ++n)
            check.require(n, trace.rows[n].k_n, 2.0 * trace.rows[n].l_sup);
        const LogDensityStats last = log_density_stats(trace.policies.back());
        check.require(N, last.k_sup, 2.0 * last.sup_norm_l);
        out.push_back(std::move(check).finish());
    }

    // (d) the running sup of K_n + |theta^n|
    // is reported with where it was attained and whether it stabilised
    // before the last quartile; the analysis only proves a bound exists, so
    // nothing is asserted against a constant.
    {
        CheckReport report;
        report.check_name = "bounded_iterates_supremum";
        numvec seq(N, 0.0);
        for (std::size_t n = 0; n < N; ++n)
            seq[n] = trace.rows[n].k_n + trace.rows[n].theta_norm;
        const CompensatedSequence comp = analyse_sequence(std::move(seq));
        report.status = comp.finite ? "pass" : "fail";
        report.reported_value = comp.max;
        report.worst_margin = comp.finite ? 0.0 : -kInf;
        report.details["argmax_n"] = comp.argmax;
        report.details["stabilised"] = comp.stabilised;
        report.details["h_within_kl_stability_proof_threshold"] =
            cert.cond_32gamma && config.h <= cert.h_kl_stability;
        report.details["h_within_kl_stability_stated_threshold"] = config.h <= cert.h_kl_stability_stated;
        out.push_back(std::move(report));
    }

    return out;
}

std::vector<CheckReport> check_critic(const RunTrace& trace, const StepSizeCertificate& cert,
                                      const FiniteMdp& mdp, const FeatureMap& features,
                                      const RunConfig& config) {
    (void)features;
    std::vector<CheckReport> out;
    const std::size_t N = trace.rows.size();

    double max_residual = 0.0;
    for (double r : trace.realisability_residuals) max_residual = std::max(max_residual, r);
    const bool realisable = max_residual <= 1e-8;
    const std::string residual_reason =
        "precondition: realisability residual " + std::to_string(max_residual) + " > 1e-8";

    const double h_gamma = config.h * cert.gamma_const;

    // (a) endpoint linear convergence of the inner loop
    if (!realisable) {
        out.push_back(InequalityCheck::skipped("inner_td_linear_convergence", residual_reason));
    } else if (config.h >= cert.h_doubleloop) {
        out.push_back(InequalityCheck::skipped("inner_td_linear_convergence",
                                               "precondition: h >= double-loop threshold"));
    } else {
        InequalityCheck check("inner_td_linear_convergence");
        for (std::size_t n = 0; n < N; ++n) {
            const double pre = trace.rows[n].critic_err_pre;
            const double post = trace.rows[n].critic_err;
            const double rhs = std::exp(-double(trace.rows[n].m_used) * h_gamma) * pre * pre;
            check.require(n, post * post, rhs);
        }
        out.push_back(std::move(check).finish());
    }

    // (b) stepwise (1 - h Gamma) contraction of squared inner errors
    if (!realisable) {
        out.push_back(InequalityCheck::skipped("inner_td_stepwise_contraction", residual_reason));
    } else if (config.h >= cert.h_doubleloop) {
        out.push_back(InequalityCheck::skipped("inner_td_stepwise_contraction",
                                               "precondition: h >= double-loop threshold"));
    } else {
        InequalityCheck check("inner_td_stepwise_contraction");
        for (std::size_t n = 0; n < N; ++n)
            trace.inner_errors[n].for_each_step([&](std::size_t, double cur, double next) {
                check.require(n, next * next, (1.0 - h_gamma) * cur * cur);
            });
        out.push_back(std::move(check).finish());
    }

    // (c) semi-gradient norm bound at every inner iterate
    if (!realisable) {
        out.push_back(InequalityCheck::skipped("semi_gradient_norm_bound", residual_reason));
    } else {
        InequalityCheck check("semi_gradient_norm_bound");
        const double factor = 2.0 * (1.0 + mdp.gamma);
        for (std::size_t n = 0; n < N; ++n) {
            const InnerSeries& errs = trace.inner_errors[n];
            trace.inner_gnorms[n].for_each_value([&](std::size_t k, double gk) {
                const double ek = errs.at(k);
                check.require(n, gk * gk, factor * ek * ek);
            });
        }
        out.push_back(std::move(check).finish());
    }

    return out;
}

std::vector<CheckReport> check_value_and_rates(const RunTrace& trace,
                                               const ProofConstants& constants,
                                               const FiniteMdp& mdp,
                                               const StepSizeCertificate& cert,
                                               const RunConfig& config) {
    std::vector<CheckReport> out;
    const std::size_t N = trace.rows.size();
    const std::size_t S = mdp.n_states;
    const double g = mdp.gamma;
    const double tau_lambda = mdp.tau * config.lambda;

    double max_residual = 0.0;
    for (double r : trace.realisability_residuals) max_residual = std::max(max_residual, r);

    // (a) one-step value improvement up to critic error, plus optimality
    // floor V* <= V^{pi^{n+1}} pointwise.
    if (max_residual > 1e-8) {
        out.push_back(InequalityCheck::skipped(
            "value_improvement",
            "precondition: realisability residual " + std::to_string(max_residual) + " > 1e-8"));
    } else if (tau_lambda > 1.0) {
        out.push_back(InequalityCheck::skipped("value_improvement",
                                               "precondition: tau*lambda > 1"));
    } else {
        InequalityCheck check("value_improvement");
        for (std::size_t n = 0; n < N; ++n) {
            const numvec& v_cur = trace.v_vectors[n];
            const numvec& v_next = trace.v_vectors[n + 1];
            const double surcharge = 2.0 / (1.0 - g) * trace.rows[n].critic_err;
            for (std::size_t s = 0; s < S; ++s) {
                check.require(n, v_next[s], v_cur[s] + surcharge);
                check.require(n, trace.v_star[s], v_next[s]);
            }
        }
        out.push_back(std::move(check).finish());
    }

    // (b) cumulative-error bound on the running minimum gap
    if (!(tau_lambda > 0.0 && tau_lambda < 1.0)) {
        out.push_back(InequalityCheck::skipped("cumulative_error_bound",
                                               "precondition: tau*lambda outside (0,1)"));
    } else {
        InequalityCheck check("cumulative_error_bound");
        const OptimalSolution opt = solve_optimal(mdp, 1e-12);
        const numvec d_star = state_occupancy(mdp, opt.pi_star, mdp.rho);
        const KlDivergences kl0 = kl_divergences(opt.pi_star, trace.policies.front(), mdp);
        double kl0_weighted = 0.0;
        for (std::size_t s = 0; s < S; ++s) kl0_weighted += kl0.kl_p_q[s] * d_star[s];

        double min_gap = kInf;
        double err_sum = 0.0;
        for (std::size_t n = 1; n <= N; ++n) {
            min_gap = std::min(min_gap, trace.rows[n - 1].gap);
            err_sum += trace.rows[n - 1].critic_err;
            const double rhs = (kl0_weighted + config.lambda * trace.rows[0].gap +
                                config.lambda * constants.c_gamma_cumulative * err_sum) /
                               (config.lambda * (1.0 - g) * double(n));
            check.require(n, min_gap, rhs);
        }
        out.push_back(std::move(check).finish());
    }

    // (c) sublinear-rate shape: n * min_{r<n} gap_r stays bounded
    if (config.schedule.variant != ScheduleVariant::logarithmic) {
        out.push_back(InequalityCheck::skipped("sublinear_rate_shape",
                                               "precondition: schedule is not logarithmic"));
    } else if (!(config.h < cert.gamma_const / (2.0 * (1.0 + g)))) {
        out.push_back(InequalityCheck::skipped("sublinear_rate_shape",
                                               "precondition: h >= Gamma/(2(1+gamma))"));
    } else if (!(tau_lambda > 0.0 && tau_lambda < 1.0)) {
        out.push_back(InequalityCheck::skipped("sublinear_rate_shape",
                                               "precondition: tau*lambda outside (0,1)"));
    } else {
        numvec seq(N, 0.0);
        double min_gap = kInf;
        for (std::size_t n = 1; n <= N; ++n) {
            min_gap = std::min(min_gap, trace.rows[n - 1].gap);
            seq[n - 1] = double(n) * min_gap;
        }
        const CompensatedSequence comp = analyse_sequence(std::move(seq));
        CheckReport report;
        report.check_name = "sublinear_rate_shape";
        report.status = comp.finite && comp.stabilised ? "pass" : "fail";
        report.reported_value = comp.max;  // fitted constant a
        report.worst_margin = comp.finite && comp.stabilised ? 0.0 : -kInf;
        report.details["argmax_n"] = comp.argmax + 1;
        report.details["compensated"] = comp.values;
        out.push_back(std::move(report));
    }

    // (d) linear-rate shape: gap_n e^{min{1/xi, c} n} stays bounded
    if (config.schedule.variant != ScheduleVariant::linear) {
        out.push_back(InequalityCheck::skipped("linear_rate_shape",
                                               "precondition: schedule is not linear"));
    } else if (!std::isfinite(constants.xi_statement)) {
        out.push_back(InequalityCheck::skipped(
            "linear_rate_shape",
            "precondition: rho(s) = 0 on a state charged by d^pi*_rho (xi infinite)"));
    } else if (!(tau_lambda <= constants.kappa)) {
        out.push_back(InequalityCheck::skipped("linear_rate_shape",
                                               "precondition: tau*lambda > (xi-1)/xi"));
    } else {
        const double rate = std::min(1.0 / constants.xi_statement, config.schedule.c);
        numvec seq(N, 0.0);
        for (std::size_t n = 0; n < N; ++n) {
            const double gap = std::max(trace.rows[n].gap, 0.0);
            seq[n] = gap == 0.0 ? 0.0 : std::exp(std::log(gap) + rate * double(n));
        }
        const CompensatedSequence comp = analyse_sequence(std::move(seq));
        CheckReport report;
        report.check_name = "linear_rate_shape";
        report.status = comp.finite && comp.stabilised ? "pass" : "fail";
        report.reported_value = comp.max;  // fitted constant b
        report.worst_margin = comp.finite && comp.stabilised ? 0.0 : -kInf;
        report.details["argmax_n"] = comp.argmax;
        report.details["rate"] = rate;
        report.details["compensated"] = comp.values;
        // The proof additionally uses 1/lambda < tau*xi, which can disagree
        // with the stated condition; both are recorded.
        report.details["proof_condition_inv_lambda_lt_tau_xi"] =
            1.0 / config.lambda < mdp.tau * constants.xi_statement;
        out.push_back(std::move(report));
    }

    // (e) Q-function continuity across consecutive policies
    {
        InequalityCheck check("q_continuity");
        for (std::size_t n = 0; n < N; ++n) {
            const Matrix& q_cur = trace.q_matrices[n];
            const Matrix& q_next = trace.q_matrices[n + 1];
            double diff = 0.0;
            for (std::size_t i = 0; i < q_cur.data().size(); ++i)
                diff = std::max(diff, std::abs(q_next.data()[i] - q_cur.data()[i]));
            const double kl = trace.rows[n].consec_kl;
            const double rhs = constants.alpha1[n] * std::sqrt(kl) + constants.alpha2 * kl;
            check.require(n, diff, rhs);
        }
        out.push_back(std::move(check).finish());
    }

    // (f) consecutive-KL bound
    if (!(tau_lambda < 1.0)) {
        out.push_back(InequalityCheck::skipped("consecutive_kl_bound",
                                               "precondition: tau*lambda >= 1"));
    } else {
        InequalityCheck check("consecutive_kl_bound");
        const double factor = config.lambda / (1.0 - tau_lambda);
        for (std::size_t n = 0; n < N; ++n)
            check.require(n, trace.rows[n].consec_kl, factor * norm2(trace.thetas[n + 1]));
        out.push_back(std::move(check).finish());
    }

    return out;
}

ProofConstants concentrability(const FiniteMdp& mdp, const PolicyLogits& pi_star) {
    ProofConstants out;
    out.c_gamma_cumulative = std::max(1.0, 2.0 / (1.0 - mdp.gamma));
    out.c_gamma_schedule = std::max(1.0, 2.0 * mdp.gamma / (1.0 - mdp.gamma));
    out.alpha2 = mdp.tau * mdp.gamma / (1.0 - mdp.gamma);
    out.delta1 = kNan;
    out.delta2 = kNan;
    out.schedule_c = kNan;

    const numvec d_star = state_occupancy(mdp, pi_star, mdp.rho);
    double xi = 0.0;
    for (std::size_t s = 0; s < mdp.n_states; ++s) {
        if (mdp.rho[s] > 0.0)
            xi = std::max(xi, d_star[s] / mdp.rho[s]);
        else if (d_star[s] > 1e-15)
            xi = kInf;
    }
    out.xi_statement = xi;
    out.xi_proof = xi / (1.0 - mdp.gamma);
    out.kappa = std::isfinite(xi) && xi > 0.0 ? (xi - 1.0) / xi : kNan;
    return out;
}

ProofConstants compute_proof_constants(const FiniteMdp& mdp, const StepSizeCertificate& cert,
                                       const RunConfig& config, const RunTrace& trace,
                                       const PolicyLogits& pi_star) {
    ProofConstants out = concentrability(mdp, pi_star);
    out.kappa_h = kNan;
    out.c2_h = kNan;
    try {
        const ScheduleConstant sc = schedule_constant(mdp, cert, config.h, config.theta0);
        out.delta1 = sc.delta1;
        out.delta2 = sc.delta2;
        out.schedule_c = sc.c;
        out.delta_feasible = true;
    } catch (const std::invalid_argument&) {
        out.delta_feasible = false;
    }

    out.alpha1.resize(trace.rows.size());
    for (std::size_t n = 0; n < trace.rows.size(); ++n) {
        const double q_sup = sup_norm(trace.q_matrices[n]);
        out.alpha1[n] = (std::sqrt(2.0) * mdp.tau * mdp.gamma * trace.rows[n].l_sup +
                         mdp.gamma * q_sup) /
                        (1.0 - mdp.gamma);
    }

    if (trace.rows.empty()) return out;

    const double g = mdp.gamma;
    const double gam = cert.gamma_const;
    const double c_sup = mdp.cost_sup();
    const double denom = gam - 3.0 * config.h * (1.0 + g) * (1.0 + g);
    out.c1_l0 = trace.rows.front().l_sup;
    if (denom > 0.0) {
        const double ratio = (3.0 * config.h + 2.0 / gam) / denom;
        out.kappa_h = 16.0 * g * g * ratio;
        out.c2_h = out.c1_l0 * out.c1_l0 +
                   4.0 / (mdp.tau * mdp.tau) * dot(config.theta0, config.theta0) +
                   4.0 * c_sup * c_sup * ratio / (mdp.tau * mdp.tau);
    }
    out.alpha1_schedule = c_sup + g * sup_norm(trace.v_vectors.front()) + g * sup_norm(trace.v_star);

    if (out.delta_feasible) {
        const double tau_lambda = mdp.tau * config.lambda;
        const double c_gamma = out.c_gamma_schedule;
        out.beta1.resize(trace.rows.size());
        out.beta2.resize(trace.rows.size());
        double decay_sum = 0.0;
        for (std::size_t n = 0; n < trace.rows.size(); ++n) {
            decay_sum += std::exp(-0.5 * double(trace.rows[n].m_used) * config.h * gam);
            out.beta1[n] = (1.0 - tau_lambda) +
                           2.0 * config.lambda * c_gamma * out.delta2 * decay_sum;
            out.beta2[n] = 2.0 * config.lambda * c_gamma * out.delta1 * decay_sum +
                           2.0 * config.lambda * out.alpha1_schedule;
            out.alpha3 = std::max(out.alpha3, out.beta2[n]);
        }
    }
    return out;
}

VerificationReport verify_run(const FiniteMdp& mdp, const FeatureMap& features,
                              const RunConfig& config, const RunTrace& trace) {
    VerificationReport report;
    report.certificate = build_certificate(mdp, features, config.lambda);

    if (trace.aborted) {
        const std::string reason = "trace aborted: " + trace.abort_reason;
        for (const char* name :
             {"critic_norm_recursion", "log_density_recursion",
              "kl_vs_centred_log_density", "bounded_iterates_supremum",
              "inner_td_linear_convergence", "inner_td_stepwise_contraction",
              "semi_gradient_norm_bound", "value_improvement",
              "cumulative_error_bound", "sublinear_rate_shape",
              "linear_rate_shape", "q_continuity", "consecutive_kl_bound"})
            report.checks.push_back(InequalityCheck::skipped(name, reason));
        report.all_ok = false;
        return report;
    }

    const OptimalSolution opt = solve_optimal(mdp, 1e-12);
    report.constants = compute_proof_constants(mdp, report.certificate, config, trace, opt.pi_star);

    auto extend = [&report](std::vector<CheckReport> more) {
        for (CheckReport& c : more) report.checks.push_back(std::move(c));
    };
    extend(check_stability(trace, report.certificate, mdp, features, config));
    extend(check_critic(trace, report.certificate, mdp, features, config));
    extend(check_value_and_rates(trace, report.constants, mdp, report.certificate, config));

    report.all_ok = true;
    for (const CheckReport& c : report.checks) report.all_ok = report.all_ok && !c.failed();
    return report;
}

namespace {

nlohmann::json check_to_json(const CheckReport& check) {
    nlohmann::json j;
    j["check_name"] = check.check_name;
    j["status"] = check.status;
    if (!check.skip_reason.empty()) j["skip_reason"] = check.skip_reason;
    if (check.first_violation_n)
        j["first_violation_n"] = *check.first_violation_n;
    else
        j["first_violation_n"] = nullptr;
    j["worst_margin"] = check.worst_margin;
    j["reported_value"] = check.reported_value;
    if (!check.details.is_null()) j["details"] = check.details;
    return j;
}

nlohmann::json constants_to_json(const ProofConstants& constants) {
    nlohmann::json j;
    j["c_gamma_cumulative"] = constants.c_gamma_cumulative;
    j["c_gamma_schedule"] = constants.c_gamma_schedule;
    j["delta1"] = constants.delta1;
    j["delta2"] = constants.delta2;
    j["schedule_c"] = constants.schedule_c;
    j["delta_feasible"] = constants.delta_feasible;
    j["alpha1"] = constants.alpha1;
    j["alpha2"] = constants.alpha2;
    j["xi_statement"] = std::isfinite(constants.xi_statement)
                            ? nlohmann::json(constants.xi_statement)
                            : nlohmann::json("inf");
    j["xi_proof"] = std::isfinite(constants.xi_proof) ? nlohmann::json(constants.xi_proof)
                                                      : nlohmann::json("inf");
    j["kappa"] = constants.kappa;
    j["kappa_h"] = constants.kappa_h;
    j["c1_l0"] = constants.c1_l0;
    j["c2_h"] = constants.c2_h;
    j["alpha1_schedule"] = constants.alpha1_schedule;
    j["beta1"] = constants.beta1;
    j["beta2"] = constants.beta2;
    j["alpha3"] = constants.alpha3;
    return j;
}

}  // namespace

nlohmann::json verification_to_json(const VerificationReport& report, const RunTrace& trace) {
    nlohmann::json j;
    nlohmann::json checks = nlohmann::json::array();
    for (const CheckReport& c : report.checks) checks.push_back(check_to_json(c));
    j["checks"] = checks;
    j["certificate"] = certificate_to_json(report.certificate);
    j["proof_constants"] = constants_to_json(report.constants);

    nlohmann::json summary;
    summary["n_policy_updates"] = trace.rows.size();
    summary["aborted"] = trace.aborted;
    if (trace.aborted) summary["abort_reason"] = trace.abort_reason;
    summary["eta"] = trace.eta;
    summary["v_star_rho"] = trace.v_star_rho;
    if (!trace.rows.empty()) {
        summary["final_gap"] = trace.rows.back().gap;
        double min_gap = kInf;
        for (const IterationRecord& r : trace.rows) min_gap = std::min(min_gap, r.gap);
        summary["min_gap"] = min_gap;
    }
    summary["all_ok"] = report.all_ok;
    j["summary"] = summary;
    return j;
}

}  // namespace pmdlab
