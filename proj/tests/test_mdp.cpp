#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "pmdlab/mdp.hpp"
#include "test_support.hpp"

using namespace pmdlab;
using pmdlab::testing::cycle_mdp;
using pmdlab::testing::random_policy;
using pmdlab::testing::simple_mdp;

namespace {
bool mentions(const ValidationReport& report, const std::string& needle) {
    for (const auto& v : report.violations)
        if (v.find(needle) != std::string::npos) return true;
    return false;
}
}  // namespace

TEST_CASE("validate_mdp accepts a well-formed instance") {
    const FiniteMdp m = simple_mdp(2, 2, 0.5, 1.0);
    const ValidationReport report = validate_mdp(m);
    CHECK(report.passed);
    CHECK(report.violations.empty());
}

TEST_CASE("validate_mdp rejects a reference measure without full support") {
    FiniteMdp m = simple_mdp(2, 2, 0.5, 1.0);
    m.mu = {1.0, 0.0};
    const ValidationReport report = validate_mdp(m);
    CHECK_FALSE(report.passed);
    CHECK(mentions(report, "reference measure lacks full support"));
}

TEST_CASE("validate_mdp rejects gamma on the boundary") {
    FiniteMdp m = simple_mdp(2, 2, 0.5, 1.0);
    m.gamma = 1.0;
    const ValidationReport report = validate_mdp(m);
    CHECK_FALSE(report.passed);
    CHECK(mentions(report, "discount not in (0,1)"));
}

TEST_CASE("validate_mdp reports multiple violations at once") {
    FiniteMdp m = simple_mdp(2, 2, 0.5, 1.0);
    m.gamma = 1.0;
    m.tau = -1.0;
    m.cost(0, 0) = std::numeric_limits<double>::infinity();
    const ValidationReport report = validate_mdp(m);
    CHECK_FALSE(report.passed);
    CHECK(report.violations.size() >= 3);
}

TEST_CASE("log_density of the reference policy is identically zero") {
    const numvec mu(4, 0.25);
    const PolicyLogits pi = PolicyLogits::reference(3, mu);
    const auto [logd, stats] = log_density(pi, mu);
    for (double x : logd.data()) CHECK(std::abs(x) <= 1e-15);
    CHECK(std::abs(stats.sup_norm_l) <= 1e-15);
    CHECK(std::abs(stats.k_sup) <= 1e-15);
}

TEST_CASE("log_density matches the hand-evaluated two-action normaliser") {
    // f(s,.) = (1, 0), mu = (1/2, 1/2): log Z = log((e + 1)/2)
    const double log_z = 0.62011450695827752;
    Matrix f(1, 2);
    f(0, 0) = 1.0;
    f(0, 1) = 0.0;
    const PolicyLogits pi(f, {0.5, 0.5});
    CHECK(pi.log_density()(0, 0) == doctest::Approx(1.0 - log_z).epsilon(1e-13));
    CHECK(pi.log_density()(0, 1) == doctest::Approx(-log_z).epsilon(1e-13));
}

TEST_CASE("log density is invariant to state-dependent logit shifts") {
    const FiniteMdp m = simple_mdp(3, 4, 0.5, 1.0);
    Rng rng(11);
    Matrix f = random_logits(rng, 3, 4, 2.0);
    Matrix shifted = f;
    for (std::size_t a = 0; a < 4; ++a) {
        shifted(0, a) += 7.0;
        shifted(1, a) -= 3.5;
        shifted(2, a) += 7.0;
    }
    const PolicyLogits p(f, m.mu), q(shifted, m.mu);
    for (std::size_t i = 0; i < p.log_density().data().size(); ++i)
        CHECK(p.log_density().data()[i] ==
              doctest::Approx(q.log_density().data()[i]).epsilon(1e-12));
}

TEST_CASE("non-finite logits are rejected") {
    Matrix f(1, 2, 0.0);
    f(0, 1) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_WITH_AS(PolicyLogits(f, {0.5, 0.5}), "logits not bounded",
                         std::invalid_argument);
}

TEST_CASE("kl_divergences on identical policies vanishes") {
    const FiniteMdp m = simple_mdp(4, 3, 0.5, 1.0);
    Rng rng(5);
    const PolicyLogits p = random_policy(rng, m);
    const KlDivergences kl = kl_divergences(p, p, m);
    for (double x : kl.kl_p_q) CHECK(std::abs(x) <= 1e-12);
}

TEST_CASE("KL to mu vanishes for the reference policy") {
    const FiniteMdp m = simple_mdp(4, 3, 0.5, 1.0);
    const PolicyLogits p = PolicyLogits::reference(m.n_states, m.mu);
    const KlDivergences kl = kl_divergences(p, p, m);
    for (double x : kl.kl_p_mu) CHECK(std::abs(x) <= 1e-14);
}

TEST_CASE("kl_divergences matches the hand-evaluated two-term sum") {
    // p(.|s) = (0.2689, 0.7311) against uniform q and uniform mu:
    // KL = 0.2689 ln(0.5378) + 0.7311 ln(1.4622)
    const double expected = 0.11098549740510355;
    const FiniteMdp m = simple_mdp(1, 2, 0.5, 1.0);
    Matrix f(1, 2);
    f(0, 0) = std::log(0.2689);
    f(0, 1) = std::log(0.7311);
    const PolicyLogits p(f, m.mu);
    const PolicyLogits q = PolicyLogits::reference(1, m.mu);
    const KlDivergences kl = kl_divergences(p, q, m);
    CHECK(kl.kl_p_q[0] == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("policy densities integrate to one and l has zero mu-mean") {
    const FiniteMdp m = simple_mdp(5, 4, 0.5, 1.0);
    Rng rng(101);
    for (int trial = 0; trial < 50; ++trial) {
        const PolicyLogits p = random_policy(rng, m, 5.0);
        const LogDensityStats stats = log_density_stats(p);
        for (std::size_t s = 0; s < m.n_states; ++s) {
            double mass = 0.0, l_mean = 0.0;
            for (std::size_t a = 0; a < m.n_actions; ++a) {
                mass += std::exp(p.log_density()(s, a)) * m.mu[a];
                l_mean += stats.l(s, a) * m.mu[a];
            }
            CHECK(std::abs(mass - 1.0) <= 1e-10);
            CHECK(std::abs(l_mean) <= 1e-12);
        }
    }
}

TEST_CASE("Gibbs inequality and its equality case") {
    const FiniteMdp m = simple_mdp(3, 4, 0.5, 1.0);
    Rng rng(303);
    for (int trial = 0; trial < 50; ++trial) {
        const PolicyLogits p = random_policy(rng, m, 3.0);
        const PolicyLogits q = random_policy(rng, m, 3.0);
        const KlDivergences kl = kl_divergences(p, q, m);
        for (std::size_t s = 0; s < m.n_states; ++s) {
            CHECK(kl.kl_p_q[s] >= -1e-12);
            CHECK(kl.kl_p_mu[s] >= -1e-12);
            if (kl.kl_p_q[s] <= 1e-12) {
                for (std::size_t a = 0; a < m.n_actions; ++a)
                    CHECK(std::abs(p.probabilities()(s, a) - q.probabilities()(s, a)) <= 1e-5);
            }
        }
    }
}

TEST_CASE("KL(pi|mu) <= 2 |l|_inf pointwise for random policies") {
    const FiniteMdp m = simple_mdp(4, 5, 0.5, 1.0);
    Rng rng(404);
    for (int trial = 0; trial < 100; ++trial) {
        const PolicyLogits p = random_policy(rng, m, 4.0);
        const LogDensityStats stats = log_density_stats(p);
        for (std::size_t s = 0; s < m.n_states; ++s)
            CHECK(stats.kl_to_mu[s] <= 2.0 * stats.sup_norm_l + 1e-12);
    }
}

TEST_CASE("instance JSON round trip reproduces the instance") {
    const FiniteMdp m = cycle_mdp(0.5, 0.7);
    const FiniteMdp back = mdp_from_json(mdp_to_json(m));
    CHECK(back.n_states == m.n_states);
    CHECK(back.n_actions == m.n_actions);
    CHECK(back.gamma == m.gamma);
    CHECK(back.tau == m.tau);
    for (std::size_t i = 0; i < m.transition.data().size(); ++i)
        CHECK(back.transition.data()[i] == m.transition.data()[i]);
    for (std::size_t i = 0; i < m.cost.data().size(); ++i)
        CHECK(back.cost.data()[i] == m.cost.data()[i]);
}

TEST_CASE("loading an invalid instance reports the violated invariant") {
    FiniteMdp m = simple_mdp(2, 2, 0.5, 1.0);
    nlohmann::json j = mdp_to_json(m);
    j["mu"] = numvec{1.0, 0.0};
    CHECK_THROWS_AS(mdp_from_json(j), std::runtime_error);
}
