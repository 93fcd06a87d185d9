#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "pmdlab/driver.hpp"
#include "pmdlab/generate.hpp"
#include "test_support.hpp"

using namespace pmdlab;
using pmdlab::testing::cycle_mdp;
using pmdlab::testing::simple_mdp;

namespace fs = std::filesystem;

namespace {

RunConfig basic_config(const FiniteMdp& m, const FeatureMap& features, double h, double lambda,
                       std::size_t updates, ScheduleKind schedule) {
    RunConfig config;
    config.h = h;
    config.lambda = lambda;
    config.n_policy_updates = updates;
    config.schedule = schedule;
    config.theta0.assign(features.dim(), 0.0);
    config.pi0_logits = Matrix(m.n_states, m.n_actions, 0.0);
    return config;
}

fs::path temp_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("pmdlab_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("schedule formulas and clamping") {
    CHECK(m_schedule(ScheduleKind::single_loop(), 5, 0.1, 0.5) == 1);
    CHECK(m_schedule(ScheduleKind::constant(17), 2, 0.1, 0.5) == 17);
    // ln(1) = 0 clamps to one step
    CHECK(m_schedule(ScheduleKind::logarithmic(1.0), 0, 0.1, 0.5) == 1);
    // ceil(80 ln 20) = 240
    CHECK(m_schedule(ScheduleKind::logarithmic(2.0), 9, 0.1, 0.5) == 240);
    // ceil((4*0.5/0.05) * 4) = 160
    CHECK(m_schedule(ScheduleKind::linear(0.5), 3, 0.1, 0.5) == 160);
}

TEST_CASE("schedule construction rejects bad parameters") {
    CHECK_THROWS_AS(ScheduleKind::logarithmic(0.0), std::invalid_argument);
    CHECK_THROWS_AS(ScheduleKind::linear(-1.0), std::invalid_argument);
    CHECK_THROWS_AS(ScheduleKind::constant(0), std::invalid_argument);
    CHECK_THROWS_AS(m_schedule(ScheduleKind::single_loop(), 0, 0.0, 0.5),
                    std::invalid_argument);
}

TEST_CASE("schedule constant matches an independent evaluation") {
    // gamma = 0.25, lambda_beta = 0.5 via two one-hot pairs, h = h_doubleloop / 2
    FiniteMdp m = simple_mdp(1, 2, 0.25, 1.0);
    const FeatureMap features = FeatureMap::one_hot(1, 2);
    const StepSizeCertificate cert = build_certificate(m, features);
    const double h = cert.h_doubleloop / 2.0;
    const numvec theta0 = {0.3, -0.2};
    const ScheduleConstant sc = schedule_constant(m, cert, h, theta0);

    const double g = m.gamma;
    const double gam = (1.0 - g) * (1.0 - std::sqrt(g)) * 0.5;
    const double denom = gam - 3.0 * h * (1.0 + g) * (1.0 + g);
    REQUIRE(denom > 0.0);
    const double ratio = (3.0 * h + 2.0 / gam) / denom;
    const double inv = 1.0 / ((1.0 - g) * 0.5);
    const double delta2 = 2.0 * m.tau * g * (std::sqrt(ratio) + inv);
    const double c_sup = m.cost_sup();
    const double delta1 = std::sqrt(dot(theta0, theta0) + c_sup * c_sup * ratio) + c_sup * inv;
    const double c_gamma = std::max(1.0, 2.0 * g / (1.0 - g));
    CHECK(sc.delta2 == doctest::Approx(delta2).epsilon(1e-12));
    CHECK(sc.delta1 == doctest::Approx(delta1).epsilon(1e-12));
    CHECK(sc.c == doctest::Approx(std::sqrt(8.0 * c_gamma * delta2 / m.tau)).epsilon(1e-12));
}

TEST_CASE("schedule constant degenerates to the clamp as gamma vanishes") {
    FiniteMdp m = simple_mdp(2, 2, 0.5, 1.0);
    m.gamma = 1e-13;
    const FeatureMap features = FeatureMap::one_hot(2, 2);
    const StepSizeCertificate cert = build_certificate(m, features);
    const ScheduleConstant sc =
        schedule_constant(m, cert, cert.h_single_loop, numvec(4, 0.0));
    CHECK(sc.c >= 1e-6);
    CHECK(sc.c <= 1e-5);  // delta2 ~ gamma, so only the clamp is left
}

TEST_CASE("schedule constant is invariant under tau rescaling") {
    // delta2 is proportional to tau, so c = sqrt(8 c(gamma) delta2 / tau)
    // depends on gamma-terms only; two evaluations must agree.
    FiniteMdp m = simple_mdp(3, 2, 0.45, 1.0, 7);
    const FeatureMap features = FeatureMap::one_hot(3, 2);
    const StepSizeCertificate cert = build_certificate(m, features);
    const double h = 0.9 * cert.h_single_loop;
    const ScheduleConstant base = schedule_constant(m, cert, h, numvec(6, 0.0));
    FiniteMdp scaled = m;
    scaled.tau = 4.0 * m.tau;
    const StepSizeCertificate cert_scaled = build_certificate(scaled, features);
    const ScheduleConstant rescaled = schedule_constant(scaled, cert_scaled, h, numvec(6, 0.0));
    CHECK(rescaled.delta2 == doctest::Approx(4.0 * base.delta2).epsilon(1e-12));
    CHECK(rescaled.c == doctest::Approx(base.c).epsilon(1e-12));
}

TEST_CASE("schedule constant rejects an infeasible critic step") {
    FiniteMdp m = simple_mdp(2, 2, 0.5, 1.0);
    const FeatureMap features = FeatureMap::one_hot(2, 2);
    const StepSizeCertificate cert = build_certificate(m, features);
    CHECK_THROWS_WITH_AS(schedule_constant(m, cert, cert.gamma_const, numvec(4, 0.0)),
                         "h too large for delta2 formula", std::invalid_argument);
}

TEST_CASE("runs are bitwise deterministic") {
    const Instance instance = demo_two_state_cycle();
    const StepSizeCertificate cert = build_certificate(instance.mdp, instance.features);
    const RunConfig config =
        basic_config(instance.mdp, instance.features, 0.9 * cert.h_single_loop,
                     0.5 / instance.mdp.tau, 40, ScheduleKind::constant(10));
    const RunTrace a = run_actor_critic(instance.mdp, instance.features, config);
    const RunTrace b = run_actor_critic(instance.mdp, instance.features, config);
    REQUIRE(a.rows.size() == b.rows.size());
    for (std::size_t n = 0; n < a.rows.size(); ++n) {
        CHECK(a.rows[n].v_rho == b.rows[n].v_rho);
        CHECK(a.rows[n].critic_err == b.rows[n].critic_err);
        CHECK(a.rows[n].consec_kl == b.rows[n].consec_kl);
    }
    for (std::size_t n = 0; n < a.thetas.size(); ++n)
        for (std::size_t k = 0; k < a.thetas[n].size(); ++k)
            CHECK(a.thetas[n][k] == b.thetas[n][k]);
}

TEST_CASE("inner bookkeeping: M+1 entries bracketing theta^n and theta^{n+1}") {
    const Instance instance = demo_two_state_cycle();
    const StepSizeCertificate cert = build_certificate(instance.mdp, instance.features);
    const RunConfig config =
        basic_config(instance.mdp, instance.features, 0.9 * cert.h_single_loop,
                     0.5 / instance.mdp.tau, 25, ScheduleKind::constant(12));
    const RunTrace trace = run_actor_critic(instance.mdp, instance.features, config);
    REQUIRE(trace.rows.size() == 25);
    for (std::size_t n = 0; n < trace.rows.size(); ++n) {
        CHECK(trace.inner_errors[n].size() == trace.rows[n].m_used + 1);
        CHECK(trace.inner_gnorms[n].size() == trace.rows[n].m_used + 1);
        CHECK(trace.inner_errors[n].front() == trace.rows[n].critic_err_pre);
        CHECK(trace.inner_errors[n].back() == trace.rows[n].critic_err);

        // theta^{n,0} = theta^n and theta^{n,M} = theta^{n+1}
        double dist0 = 0.0, dist1 = 0.0;
        for (std::size_t k = 0; k < trace.thetas[n].size(); ++k) {
            const double d0 = trace.thetas[n][k] - trace.theta_pi[n][k];
            const double d1 = trace.thetas[n + 1][k] - trace.theta_pi[n][k];
            dist0 += d0 * d0;
            dist1 += d1 * d1;
        }
        CHECK(std::sqrt(dist0) == doctest::Approx(trace.rows[n].critic_err_pre).epsilon(1e-12));
        CHECK(std::sqrt(dist1) == doctest::Approx(trace.rows[n].critic_err).epsilon(1e-12));
    }
}

TEST_CASE("inner errors are non-increasing under an admissible critic step") {
    const Instance instance = demo_two_state_cycle();
    const StepSizeCertificate cert = build_certificate(instance.mdp, instance.features);
    const RunConfig config =
        basic_config(instance.mdp, instance.features, 0.9 * cert.h_doubleloop,
                     0.5 / instance.mdp.tau, 20, ScheduleKind::constant(30));
    const RunTrace trace = run_actor_critic(instance.mdp, instance.features, config);
    for (std::size_t n = 0; n < trace.rows.size(); ++n)
        trace.inner_errors[n].for_each_step(
            [&](std::size_t, double cur, double next) { CHECK(next <= cur + 1e-12); });
}

TEST_CASE("the driver composes the module operations faithfully") {
    const Instance instance = demo_two_state_cycle();
    const FiniteMdp& m = instance.mdp;
    const StepSizeCertificate cert = build_certificate(m, instance.features);
    const RunConfig config =
        basic_config(m, instance.features, 0.9 * cert.h_single_loop, 0.5 / m.tau, 20,
                     ScheduleKind::single_loop());
    const RunTrace trace = run_actor_critic(m, instance.features, config);

    // manual composition through the op-level path (direct weighted sums)
    PolicyLogits pi(config.pi0_logits, m.mu);
    CriticState theta{config.theta0};
    const ActorConfig actor{config.lambda, m.tau};
    for (std::size_t n = 0; n < 20; ++n) {
        const MsbeResult res = msbe_and_semigradient(m, pi, theta, instance.features);
        theta = td_step(theta, config.h, res.semi_gradient);
        const auto [q_hat, a_hat] = approx_q_and_advantage(theta, instance.features, pi, m);
        pi = mirror_step(pi, a_hat, actor);

        double drift = 0.0;
        for (std::size_t k = 0; k < theta.theta.size(); ++k)
            drift = std::max(drift, std::abs(theta.theta[k] - trace.thetas[n + 1][k]));
        CHECK(drift <= 1e-9);
    }
    CHECK(total_variation(pi, trace.policies.back()) <= 1e-9);
}

TEST_CASE("trace rows agree with recomputation from the policy snapshots") {
    const Instance instance = demo_two_state_cycle();
    const FiniteMdp& m = instance.mdp;
    const StepSizeCertificate cert = build_certificate(m, instance.features);
    const RunConfig config =
        basic_config(m, instance.features, 0.9 * cert.h_single_loop, 0.5 / m.tau, 15,
                     ScheduleKind::constant(4));
    const RunTrace trace = run_actor_critic(m, instance.features, config);
    for (std::size_t n = 0; n < trace.rows.size(); ++n) {
        const LogDensityStats stats = log_density_stats(trace.policies[n]);
        CHECK(trace.rows[n].k_n == stats.k_sup);
        CHECK(trace.rows[n].l_sup == stats.sup_norm_l);
        CHECK(trace.rows[n].theta_norm == norm2(trace.thetas[n]));
        const PolicyEvaluation eval = evaluate_policy(m, trace.policies[n]);
        CHECK(trace.rows[n].v_rho == dot(eval.v, m.rho));
        const KlDivergences consec =
            kl_divergences(trace.policies[n + 1], trace.policies[n], m);
        double sup = 0.0;
        for (double x : consec.kl_p_q) sup = std::max(sup, x);
        CHECK(trace.rows[n].consec_kl == sup);
    }
}

TEST_CASE("gap never drops below the oracle tolerance") {
    const Instance instance = demo_two_state_cycle();
    const StepSizeCertificate cert = build_certificate(instance.mdp, instance.features);
    const RunConfig config =
        basic_config(instance.mdp, instance.features, 0.9 * cert.h_doubleloop,
                     0.5 / instance.mdp.tau, 80, ScheduleKind::constant(3000));
    const RunTrace trace = run_actor_critic(instance.mdp, instance.features, config);
    for (const IterationRecord& r : trace.rows) CHECK(r.gap >= -1e-11);
}

TEST_CASE("eta and the trace dimensions are recorded") {
    const Instance instance = demo_two_state_cycle();
    const RunConfig config = basic_config(instance.mdp, instance.features, 0.001, 0.5, 8,
                                          ScheduleKind::single_loop());
    const RunTrace trace = run_actor_critic(instance.mdp, instance.features, config);
    CHECK(trace.eta == doctest::Approx(0.5 / 0.001));
    CHECK(trace.policies.size() == 9);
    CHECK(trace.thetas.size() == 9);
    CHECK(trace.v_vectors.size() == 9);
    CHECK(trace.theta_pi.size() == 8);
}

TEST_CASE("an inadmissible configuration diverges and aborts with a diagnostic") {
    const FiniteMdp m = simple_mdp(3, 2, 0.99, 1.0, 111);
    const FeatureMap features = FeatureMap::one_hot(3, 2);
    RunConfig config = basic_config(m, features, 50.0, 0.99, 200, ScheduleKind::single_loop());
    const RunTrace trace = run_actor_critic(m, features, config);
    CHECK(trace.aborted);
    CHECK_FALSE(trace.abort_reason.empty());
    CHECK(trace.rows.size() < 200);
    CHECK(trace.rows.size() == trace.abort_iteration);
}

TEST_CASE("the certificate gate rejects inadmissible configurations upfront") {
    const Instance instance = demo_two_state_cycle();
    const StepSizeCertificate cert = build_certificate(instance.mdp, instance.features);
    RunConfig config = basic_config(instance.mdp, instance.features, 2.0 * cert.h_doubleloop,
                                    0.5 / instance.mdp.tau, 10, ScheduleKind::constant(5));
    config.enforce_certificate = true;
    CHECK_THROWS_AS(run_actor_critic(instance.mdp, instance.features, config),
                    std::invalid_argument);

    config.h = 0.5 * cert.h_doubleloop;
    config.lambda = 2.0 / instance.mdp.tau;  // tau*lambda = 2
    CHECK_THROWS_AS(run_actor_critic(instance.mdp, instance.features, config),
                    std::invalid_argument);
}

TEST_CASE("trace CSV round trip and schema validation") {
    const Instance instance = demo_two_state_cycle();
    const StepSizeCertificate cert = build_certificate(instance.mdp, instance.features);
    const RunConfig config =
        basic_config(instance.mdp, instance.features, 0.9 * cert.h_single_loop,
                     0.5 / instance.mdp.tau, 12, ScheduleKind::constant(6));
    const RunTrace trace = run_actor_critic(instance.mdp, instance.features, config);

    const fs::path dir = temp_dir("trace_csv");
    const fs::path csv = dir / "trace.csv";
    write_trace_csv(trace, csv);
    const std::vector<IterationRecord> rows = read_trace_csv(csv);
    REQUIRE(rows.size() == trace.rows.size());
    for (std::size_t n = 0; n < rows.size(); ++n) {
        CHECK(rows[n].k_n == trace.rows[n].k_n);
        CHECK(rows[n].v_rho == trace.rows[n].v_rho);
        CHECK(rows[n].gap == trace.rows[n].gap);
        CHECK(rows[n].critic_err == trace.rows[n].critic_err);
        CHECK(rows[n].m_used == trace.rows[n].m_used);
    }

    // drop a column from the header: the reader must name it
    std::ifstream in(csv);
    std::string header, rest, line;
    std::getline(in, header);
    while (std::getline(in, line)) rest += line + "\n";
    in.close();
    const std::string broken_header = "n,K_n,theta_norm,l_sup,v_rho,gap,critic_err,"
                                      "critic_err_pre,m_used";
    const fs::path broken = dir / "broken.csv";
    std::ofstream out(broken);
    out << broken_header << "\n" << rest;
    out.close();
    CHECK_THROWS_WITH_AS(read_trace_csv(broken), "trace file missing column 'consec_kl'",
                         std::runtime_error);
}

TEST_CASE("inner sidecar JSON round trip preserves the compressed series") {
    const Instance instance = demo_two_state_cycle();
    const StepSizeCertificate cert = build_certificate(instance.mdp, instance.features);
    // large constant M forces the fixed-point tail path
    const RunConfig config =
        basic_config(instance.mdp, instance.features, 0.9 * cert.h_doubleloop,
                     0.5 / instance.mdp.tau, 6, ScheduleKind::constant(20000));
    const RunTrace trace = run_actor_critic(instance.mdp, instance.features, config);

    bool used_tail = false;
    for (const InnerSeries& s : trace.inner_errors) used_tail = used_tail || s.tail_count() > 0;
    CHECK(used_tail);

    const fs::path dir = temp_dir("inner_json");
    write_inner_json(trace, dir / "inner.json");
    const auto back = read_inner_json(dir / "inner.json");
    REQUIRE(back.size() == trace.inner_errors.size());
    for (std::size_t n = 0; n < back.size(); ++n) {
        CHECK(back[n].first.size() == trace.inner_errors[n].size());
        CHECK(back[n].first.back() == trace.inner_errors[n].back());
        CHECK(back[n].second.size() == trace.inner_gnorms[n].size());
    }
}

TEST_CASE("config JSON requires explicit step sizes") {
    const Instance instance = demo_two_state_cycle();
    nlohmann::json j;
    j["lambda"] = 0.5;
    j["n_policy_updates"] = 10;
    j["schedule"] = {{"kind", "single_loop"}};
    CHECK_THROWS_WITH_AS(config_from_json(j, instance.mdp, instance.features),
                         "config missing required field 'h'", std::runtime_error);
    j["h"] = 0.01;
    j.erase("lambda");
    CHECK_THROWS_WITH_AS(config_from_json(j, instance.mdp, instance.features),
                         "config missing required field 'lambda'", std::runtime_error);
}

TEST_CASE("config JSON round trip") {
    const Instance instance = demo_two_state_cycle();
    RunConfig config = basic_config(instance.mdp, instance.features, 0.003, 0.7, 42,
                                    ScheduleKind::logarithmic(3.25));
    config.enforce_certificate = true;
    const RunConfig back =
        config_from_json(config_to_json(config), instance.mdp, instance.features);
    CHECK(back.h == config.h);
    CHECK(back.lambda == config.lambda);
    CHECK(back.n_policy_updates == config.n_policy_updates);
    CHECK(back.schedule.variant == config.schedule.variant);
    CHECK(back.schedule.c == config.schedule.c);
    CHECK(back.enforce_certificate);
}

TEST_CASE("M = 10^4 makes the critic exact and the gap monotone") {
    const FiniteMdp m = simple_mdp(2, 2, 0.2, 1.0, 141);
    const FeatureMap features = FeatureMap::one_hot(2, 2);
    const StepSizeCertificate cert = build_certificate(m, features);
    const RunConfig config = basic_config(m, features, 0.9 * cert.h_doubleloop, 0.5 / m.tau, 60,
                                          ScheduleKind::constant(10000));
    const RunTrace trace = run_actor_critic(m, features, config);
    REQUIRE_FALSE(trace.aborted);
    for (const IterationRecord& r : trace.rows) CHECK(r.critic_err <= 1e-8);
    for (std::size_t n = 0; n + 1 < trace.rows.size(); ++n)
        CHECK(trace.rows[n + 1].gap <= trace.rows[n].gap + 1e-12);
    CHECK(trace.rows.back().gap <= 1e-6);
}

TEST_CASE("exact-critic double loop drives the gap to the oracle optimum") {
    const FiniteMdp m = cycle_mdp(0.5, 0.7);
    const FeatureMap features = FeatureMap::one_hot(2, 2);
    const StepSizeCertificate cert = build_certificate(m, features);
    const RunConfig config = basic_config(m, features, 0.9 * cert.h_doubleloop, 0.5 / m.tau, 80,
                                          ScheduleKind::constant(5000));
    const RunTrace trace = run_actor_critic(m, features, config);
    REQUIRE_FALSE(trace.aborted);
    CHECK(trace.rows.back().gap <= 1e-8);
    CHECK(trace.rows.back().critic_err <= 1e-8);
}
