#include "pmdlab/driver.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace pmdlab {

ScheduleKind ScheduleKind::constant(std::size_t m) {
    if (m < 1) throw std::invalid_argument("schedule: constant M must be at least 1");
    return {ScheduleVariant::constant_m, m, 0.0};
}

ScheduleKind ScheduleKind::logarithmic(double c) {
    if (!(c > 0.0)) throw std::invalid_argument("schedule: logarithmic c must be positive");
    return {ScheduleVariant::logarithmic, 1, c};
}

ScheduleKind ScheduleKind::linear(double c) {
    if (!(c > 0.0)) throw std::invalid_argument("schedule: linear c must be positive");
    return {ScheduleVariant::linear, 1, c};
}

std::string ScheduleKind::name() const {
    switch (variant) {
        case ScheduleVariant::single_loop: return "single_loop";
        case ScheduleVariant::constant_m: return "constant";
        case ScheduleVariant::logarithmic: return "logarithmic";
        case ScheduleVariant::linear: return "linear";
    }
    return "single_loop";
}

std::size_t m_schedule(const ScheduleKind& kind, std::size_t n, double h, double gamma_const) {
    if (!(h > 0.0) || !(gamma_const > 0.0))
        throw std::invalid_argument("m_schedule: h and Gamma must be positive");

    double value = 1.0;
    switch (kind.variant) {
        case ScheduleVariant::single_loop: return 1;
        case ScheduleVariant::constant_m: return kind.m;
        case ScheduleVariant::logarithmic:
            if (!(kind.c > 0.0))
                throw std::invalid_argument("m_schedule: logarithmic c must be positive");
            value = 4.0 / (h * gamma_const) * std::log(kind.c * double(n + 1));
            break;
        case ScheduleVariant::linear:
            if (!(kind.c > 0.0))
                throw std::invalid_argument("m_schedule: linear c must be positive");
            value = 4.0 * kind.c / (h * gamma_const) * double(n + 1);
            break;
    }
    if (!(value < 4.6e18)) throw std::runtime_error("m_schedule: schedule value overflows");
    if (value <= 1.0) return 1;
    return static_cast<std::size_t>(std::ceil(value));
}

ScheduleConstant schedule_constant(const FiniteMdp& mdp, const StepSizeCertificate& cert,
                                   double h, const numvec& theta0) {
    if (!(h > 0.0)) throw std::invalid_argument("schedule_constant: h must be positive");
    const double g = mdp.gamma;
    const double gam = cert.gamma_const;
    const double denom = gam - 3.0 * h * (1.0 + g) * (1.0 + g);
    if (!(denom > 0.0)) throw std::invalid_argument("h too large for delta2 formula");

    ScheduleConstant out;
    out.c_gamma = std::max(1.0, 2.0 * g / (1.0 - g));
    const double ratio = (3.0 * h + 2.0 / gam) / denom;
    const double inv = 1.0 / ((1.0 - g) * cert.lambda_beta);
    out.delta2 = 2.0 * mdp.tau * g * (std::sqrt(ratio) + inv);
    const double c_sup = mdp.cost_sup();
    out.delta1 = std::sqrt(dot(theta0, theta0) + c_sup * c_sup * ratio) + c_sup * inv;
    out.c = std::max(std::sqrt(8.0 * out.c_gamma * out.delta2 / mdp.tau), 1e-6);
    return out;
}

namespace {

double distance2(const numvec& a, const numvec& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return std::sqrt(s);
}

void validate_config(const FiniteMdp& mdp, const FeatureMap& features, const RunConfig& config) {
    if (!(config.h > 0.0)) throw std::invalid_argument("run config: h must be positive");
    if (!(config.lambda > 0.0)) throw std::invalid_argument("run config: lambda must be positive");
    if (config.n_policy_updates == 0)
        throw std::invalid_argument("run config: n_policy_updates must be positive");
    if (config.theta0.size() != features.dim())
        throw std::invalid_argument("run config: theta0 dimension mismatch");
    if (config.pi0_logits.rows() != mdp.n_states || config.pi0_logits.cols() != mdp.n_actions)
        throw std::invalid_argument("run config: pi0 shape mismatch");
    if ((config.schedule.variant == ScheduleVariant::logarithmic ||
         config.schedule.variant == ScheduleVariant::linear) &&
        !(config.schedule.c > 0.0))
        throw std::invalid_argument("run config: schedule constant c must be positive");
    if (config.schedule.variant == ScheduleVariant::constant_m && config.schedule.m < 1)
        throw std::invalid_argument("run config: constant schedule M must be at least 1");
}

}  // namespace

RunTrace run_actor_critic(const FiniteMdp& mdp, const FeatureMap& features,
                          const RunConfig& config) {
    validate_config(mdp, features, config);
    const StepSizeCertificate cert = build_certificate(mdp, features, config.lambda);

    if (config.enforce_certificate) {
        if (!cert.tau_lambda_ok)
            throw std::invalid_argument("run config: certificate requires 0 < tau*lambda < 1");
        const double applicable = config.schedule.variant == ScheduleVariant::single_loop
                                      ? cert.h_single_loop
                                      : cert.h_doubleloop;
        if (config.h > applicable)
            throw std::invalid_argument(
                "run config: certificate requires h within the applicable theorem threshold");
    }

    RunTrace trace;
    trace.eta = config.lambda / config.h;

    const OptimalSolution opt = solve_optimal(mdp, 1e-12);
    trace.v_star = opt.v_star;
    trace.v_star_rho = dot(opt.v_star, mdp.rho);

    const ActorConfig actor{config.lambda, mdp.tau};

    PolicyLogits pi(config.pi0_logits, mdp.mu);
    numvec theta = config.theta0;
    trace.policies.push_back(pi);
    trace.thetas.push_back(theta);

    auto abort_run = [&trace](std::size_t n, const std::string& reason) {
        trace.aborted = true;
        trace.abort_iteration = n;
        trace.abort_reason = reason;
    };

    for (std::size_t n = 0; n < config.n_policy_updates; ++n) {
        const PolicyEvaluation eval = evaluate_policy(mdp, pi);
        const LogDensityStats stats = log_density_stats(pi);
        trace.v_vectors.push_back(eval.v);
        trace.q_matrices.push_back(eval.q);

        const ExactThetaResult target = exact_theta(mdp, pi, features);
        trace.theta_pi.push_back(target.theta);
        trace.realisability_residuals.push_back(target.residual);

        const SemiGradientModel model = semi_gradient_model(mdp, pi, features);
        const std::size_t m_n = m_schedule(config.schedule, n, config.h, cert.gamma_const);

        InnerSeries errors, gnorms;
        numvec current = theta;
        for (std::size_t k = 0;; ++k) {
            const numvec g = model.eval(current);
            errors.push(distance2(current, target.theta));
            gnorms.push(norm2(g));
            if (k == m_n) break;

            numvec next = current;
            for (std::size_t j = 0; j < next.size(); ++j) next[j] -= config.h * g[j];
            if (next == current) {
                // Fixed point of the exact floating-point map: steps
                // k+1 .. m_n all yield this iterate.
                errors.set_tail(errors.back(), m_n - k);
                gnorms.set_tail(gnorms.back(), m_n - k);
                break;
            }
            current = std::move(next);
        }
        const numvec theta_next = current;

        if (!all_finite(theta_next)) {
            abort_run(n, "critic parameters became non-finite at update " + std::to_string(n));
            return trace;
        }
        if (norm2(theta_next) > 1e12) {
            abort_run(n, "critic parameter norm exceeded 1e12 at update " + std::to_string(n));
            return trace;
        }

        const auto [q_hat, a_hat] =
            approx_q_and_advantage(CriticState{theta_next}, features, pi, mdp);
        PolicyLogits pi_next = mirror_step(pi, a_hat, actor);
        const LogDensityStats stats_next = log_density_stats(pi_next);
        if (stats_next.sup_norm_l > 1e12) {
            abort_run(n, "normalised log-density sup-norm exceeded 1e12 at update " +
                             std::to_string(n));
            return trace;
        }

        const KlDivergences consec = kl_divergences(pi_next, pi, mdp);
        double consec_sup = 0.0;
        for (double x : consec.kl_p_q) consec_sup = std::max(consec_sup, x);

        IterationRecord row;
        row.n = n;
        row.k_n = stats.k_sup;
        row.theta_norm = norm2(theta);
        row.l_sup = stats.sup_norm_l;
        row.v_rho = dot(eval.v, mdp.rho);
        row.gap = row.v_rho - trace.v_star_rho;
        row.critic_err = distance2(theta_next, target.theta);
        row.critic_err_pre = errors.front();
        row.consec_kl = consec_sup;
        row.m_used = m_n;
        trace.rows.push_back(row);
        trace.inner_errors.push_back(std::move(errors));
        trace.inner_gnorms.push_back(std::move(gnorms));

        theta = theta_next;
        pi = std::move(pi_next);
        trace.policies.push_back(pi);
        trace.thetas.push_back(theta);
    }

    const PolicyEvaluation final_eval = evaluate_policy(mdp, pi);
    trace.v_vectors.push_back(final_eval.v);
    trace.q_matrices.push_back(final_eval.q);
    return trace;
}

// --- persistence -----------------------------------------------------------

const std::vector<std::string> kTraceColumns = {
    "n",   "K_n", "theta_norm", "l_sup",          "v_rho",
    "gap", "critic_err",        "critic_err_pre", "consec_kl", "m_used"};

namespace {

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

void write_trace_csv(const RunTrace& trace, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open trace file for writing: " + path.string());
    out << "n,K_n,theta_norm,l_sup,v_rho,gap,critic_err,critic_err_pre,consec_kl,m_used\n";
    for (const IterationRecord& r : trace.rows) {
        out << r.n << ',' << format_double(r.k_n) << ',' << format_double(r.theta_norm) << ','
            << format_double(r.l_sup) << ',' << format_double(r.v_rho) << ','
            << format_double(r.gap) << ',' << format_double(r.critic_err) << ','
            << format_double(r.critic_err_pre) << ',' << format_double(r.consec_kl) << ','
            << r.m_used << '\n';
    }
}

std::vector<IterationRecord> read_trace_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open trace file: " + path.string());

    std::string header;
    if (!std::getline(in, header)) throw std::runtime_error("trace file is empty");
    std::vector<std::string> names;
    {
        std::stringstream ss(header);
        std::string tok;
        while (std::getline(ss, tok, ',')) names.push_back(tok);
    }
    for (const std::string& expected : kTraceColumns) {
        bool found = false;
        for (const std::string& n : names) found = found || n == expected;
        if (!found)
            throw std::runtime_error("trace file missing column '" + expected + "'");
    }
    if (names.size() != kTraceColumns.size())
        throw std::runtime_error("trace file has unexpected extra columns");
    for (std::size_t i = 0; i < names.size(); ++i)
        if (names[i] != kTraceColumns[i])
            throw std::runtime_error("trace file columns out of order at '" + names[i] + "'");

    std::vector<IterationRecord> rows;
    std::string line;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string tok;
        numvec vals;
        while (std::getline(ss, tok, ',')) {
            try {
                vals.push_back(std::stod(tok));
            } catch (const std::exception&) {
                throw std::runtime_error("trace file line " + std::to_string(lineno) +
                                         ": cannot parse value '" + tok + "'");
            }
        }
        if (vals.size() != kTraceColumns.size())
            throw std::runtime_error("trace file line " + std::to_string(lineno) +
                                     " has wrong number of fields");
        IterationRecord r;
        r.n = static_cast<std::size_t>(vals[0]);
        r.k_n = vals[1];
        r.theta_norm = vals[2];
        r.l_sup = vals[3];
        r.v_rho = vals[4];
        r.gap = vals[5];
        r.critic_err = vals[6];
        r.critic_err_pre = vals[7];
        r.consec_kl = vals[8];
        r.m_used = static_cast<std::size_t>(vals[9]);
        rows.push_back(r);
    }
    return rows;
}

namespace {

nlohmann::json series_to_json(const InnerSeries& s) {
    nlohmann::json j;
    j["prefix"] = s.prefix();
    j["tail_value"] = s.tail_value();
    j["tail_count"] = s.tail_count();
    return j;
}

InnerSeries series_from_json(const nlohmann::json& j) {
    InnerSeries s;
    for (double v : j.at("prefix").get<numvec>()) s.push(v);
    s.set_tail(j.at("tail_value").get<double>(), j.at("tail_count").get<std::size_t>());
    return s;
}

}  // namespace

void write_inner_json(const RunTrace& trace, const std::filesystem::path& path) {
    nlohmann::json j;
    nlohmann::json inner = nlohmann::json::array();
    for (std::size_t n = 0; n < trace.inner_errors.size(); ++n) {
        nlohmann::json entry;
        entry["n"] = n;
        entry["m"] = trace.rows[n].m_used;
        entry["errors"] = series_to_json(trace.inner_errors[n]);
        entry["g_norms"] = series_to_json(trace.inner_gnorms[n]);
        inner.push_back(entry);
    }
    j["inner"] = inner;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open sidecar file for writing: " + path.string());
    out << j.dump() << '\n';
}

std::vector<std::pair<InnerSeries, InnerSeries>> read_inner_json(
    const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open sidecar file: " + path.string());
    nlohmann::json j;
    in >> j;
    std::vector<std::pair<InnerSeries, InnerSeries>> out;
    try {
        for (const auto& entry : j.at("inner"))
            out.emplace_back(series_from_json(entry.at("errors")),
                             series_from_json(entry.at("g_norms")));
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("sidecar JSON malformed: ") + e.what());
    }
    return out;
}

nlohmann::json config_to_json(const RunConfig& config) {
    nlohmann::json j;
    j["h"] = config.h;
    j["lambda"] = config.lambda;
    j["n_policy_updates"] = config.n_policy_updates;
    nlohmann::json sched;
    sched["kind"] = config.schedule.name();
    if (config.schedule.variant == ScheduleVariant::constant_m) sched["m"] = config.schedule.m;
    if (config.schedule.variant == ScheduleVariant::logarithmic ||
        config.schedule.variant == ScheduleVariant::linear)
        sched["c"] = config.schedule.c;
    j["schedule"] = sched;
    j["theta0"] = config.theta0;
    nlohmann::json pi0 = nlohmann::json::array();
    for (std::size_t s = 0; s < config.pi0_logits.rows(); ++s) {
        auto row = config.pi0_logits.row(s);
        pi0.push_back(numvec(row.begin(), row.end()));
    }
    j["pi0"] = pi0;
    j["enforce_certificate"] = config.enforce_certificate;
    return j;
}

RunConfig config_from_json(const nlohmann::json& j, const FiniteMdp& mdp,
                           const FeatureMap& features) {
    RunConfig config;
    // h and lambda are deliberately without defaults: every theorem
    // conditions on them.
    if (!j.contains("h")) throw std::runtime_error("config missing required field 'h'");
    if (!j.contains("lambda")) throw std::runtime_error("config missing required field 'lambda'");
    if (!j.contains("n_policy_updates"))
        throw std::runtime_error("config missing required field 'n_policy_updates'");
    try {
        config.h = j.at("h").get<double>();
        config.lambda = j.at("lambda").get<double>();
        config.n_policy_updates = j.at("n_policy_updates").get<std::size_t>();

        const auto& sched = j.at("schedule");
        const std::string kind = sched.at("kind").get<std::string>();
        if (kind == "single_loop")
            config.schedule = ScheduleKind::single_loop();
        else if (kind == "constant")
            config.schedule = ScheduleKind::constant(sched.at("m").get<std::size_t>());
        else if (kind == "logarithmic")
            config.schedule = ScheduleKind::logarithmic(sched.at("c").get<double>());
        else if (kind == "linear")
            config.schedule = ScheduleKind::linear(sched.at("c").get<double>());
        else
            throw std::runtime_error("config schedule kind '" + kind + "' not recognised");

        if (!j.contains("theta0") || j.at("theta0").is_string()) {
            config.theta0.assign(features.dim(), 0.0);
        } else {
            config.theta0 = j.at("theta0").get<numvec>();
        }

        if (!j.contains("pi0") || j.at("pi0").is_string()) {
            config.pi0_logits = Matrix(mdp.n_states, mdp.n_actions, 0.0);
        } else {
            const auto& rows = j.at("pi0");
            config.pi0_logits = Matrix(mdp.n_states, mdp.n_actions);
            for (std::size_t s = 0; s < mdp.n_states; ++s) {
                const auto row = rows.at(s).get<numvec>();
                if (row.size() != mdp.n_actions)
                    throw std::runtime_error("config pi0 row has wrong length");
                for (std::size_t a = 0; a < mdp.n_actions; ++a) config.pi0_logits(s, a) = row[a];
            }
        }
        config.enforce_certificate = j.value("enforce_certificate", false);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("config JSON malformed: ") + e.what());
    }
    return config;
}

}  // namespace pmdlab
