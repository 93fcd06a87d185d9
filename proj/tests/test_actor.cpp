#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "pmdlab/actor.hpp"
#include "pmdlab/oracle.hpp"
#include "test_support.hpp"

using namespace pmdlab;
using pmdlab::testing::random_policy;
using pmdlab::testing::simple_mdp;

namespace {

/// Centres an arbitrary matrix to pi-mean zero per state so it is a valid
/// advantage-shaped input.
Matrix centre(const Matrix& raw, const PolicyLogits& pi) {
    Matrix out = raw;
    for (std::size_t s = 0; s < out.rows(); ++s) {
        double mean = 0.0;
        for (std::size_t a = 0; a < out.cols(); ++a)
            mean += out(s, a) * pi.probabilities()(s, a);
        for (std::size_t a = 0; a < out.cols(); ++a) out(s, a) -= mean;
    }
    return out;
}

}  // namespace

TEST_CASE("zero advantage leaves the policy unchanged") {
    const FiniteMdp m = simple_mdp(3, 3, 0.5, 1.0);
    Rng rng(3);
    const PolicyLogits pi = random_policy(rng, m, 1.0);
    const PolicyLogits next = mirror_step(pi, Matrix(3, 3, 0.0), {0.5, m.tau});
    CHECK(total_variation(pi, next) <= 1e-14);
}

TEST_CASE("mirror step matches the hand-evaluated exponential tilt") {
    // f = 0, mu uniform, a_hat = (+1, -1), lambda = 0.5:
    // new logits (-0.5, +0.5), so pi'(a_0) = 1/(1+e)
    const FiniteMdp m = simple_mdp(1, 2, 0.5, 1.0);
    const PolicyLogits pi = PolicyLogits::reference(1, m.mu);
    Matrix a_hat(1, 2);
    a_hat(0, 0) = 1.0;
    a_hat(0, 1) = -1.0;
    const PolicyLogits next = mirror_step(pi, a_hat, {0.5, m.tau});
    CHECK(next.probabilities()(0, 0) ==
          doctest::Approx(0.26894142136999512).epsilon(1e-12));
}

TEST_CASE("state constants in the advantage are absorbed by the normaliser") {
    const FiniteMdp m = simple_mdp(3, 4, 0.5, 1.0);
    Rng rng(5);
    const PolicyLogits pi = random_policy(rng, m, 1.0);
    const Matrix a_hat = centre(random_logits(rng, 3, 4, 1.0), pi);
    const double lambda = 0.7;
    const PolicyLogits stepped = mirror_step(pi, a_hat, {lambda, m.tau});

    // shifting a_hat by a per-state constant changes only the logits' gauge
    Matrix f_shifted = pi.logits();
    for (std::size_t s = 0; s < 3; ++s)
        for (std::size_t a = 0; a < 4; ++a)
            f_shifted(s, a) -= lambda * (a_hat(s, a) + 3.7);
    const PolicyLogits shifted(f_shifted, m.mu);
    CHECK(total_variation(stepped, shifted) <= 1e-13);
}

TEST_CASE("the pi-mean-zero precondition is enforced") {
    const FiniteMdp m = simple_mdp(2, 2, 0.5, 1.0);
    const PolicyLogits pi = PolicyLogits::reference(2, m.mu);
    CHECK_THROWS_AS(mirror_step(pi, Matrix(2, 2, 1.0), {0.5, m.tau}), std::invalid_argument);
}

TEST_CASE("tau*lambda >= 1 yields a warning, not a rejection") {
    const ActorConfig unstable{2.0, 1.0};
    CHECK(unstable.stability_warning().has_value());
    const ActorConfig stable{0.5, 1.0};
    CHECK_FALSE(stable.stability_warning().has_value());

    const FiniteMdp m = simple_mdp(2, 2, 0.5, 1.0);
    const PolicyLogits pi = PolicyLogits::reference(2, m.mu);
    CHECK_NOTHROW(mirror_step(pi, Matrix(2, 2, 0.0), unstable));
}

TEST_CASE("surrogate objective vanishes at the base policy") {
    const FiniteMdp m = simple_mdp(4, 3, 0.6, 1.1, 11);
    const FeatureMap features = FeatureMap::one_hot(4, 3);
    Rng rng(13);
    const PolicyLogits base = random_policy(rng, m, 1.0);
    numvec theta(m.sa_count());
    for (double& x : theta) x = rng.uniform(-1.0, 1.0);
    const double value =
        gtilde_objective(m, base, base, CriticState{theta}, features, {0.5, m.tau});
    CHECK(std::abs(value) <= 1e-12);
}

TEST_CASE("the mirror step minimises the surrogate objective") {
    const FiniteMdp m = simple_mdp(4, 3, 0.65, 1.0, 17);
    const FeatureMap features = FeatureMap::one_hot(4, 3);
    Rng rng(19);
    const ActorConfig actor{0.5, m.tau};

    for (int trial = 0; trial < 5; ++trial) {
        const PolicyLogits base = random_policy(rng, m, 1.0);
        numvec theta(m.sa_count());
        for (double& x : theta) x = rng.uniform(-1.0, 1.0);
        const CriticState critic{theta};
        const auto [q_hat, a_hat] = approx_q_and_advantage(critic, features, base, m);
        const PolicyLogits stepped = mirror_step(base, a_hat, actor);
        const double at_min = gtilde_objective(m, stepped, base, critic, features, actor);

        // the base policy is feasible and attains zero
        CHECK(at_min <= 1e-10);

        for (double magnitude : {1e-3, 1e-1, 1.0}) {
            for (int p = 0; p < 100; ++p) {
                Matrix f = stepped.logits();
                for (double& x : f.data()) x += rng.uniform(-magnitude, magnitude);
                const PolicyLogits candidate(f, m.mu);
                const double value =
                    gtilde_objective(m, candidate, base, critic, features, actor);
                CHECK(at_min <= value + 1e-10);
            }
        }
    }
}

TEST_CASE("global minimiser coincides with the per-state exponential tilt") {
    const FiniteMdp m = simple_mdp(3, 4, 0.55, 1.0, 23);
    const FeatureMap features = FeatureMap::one_hot(3, 4);
    Rng rng(29);
    const PolicyLogits base = random_policy(rng, m, 1.5);
    numvec theta(m.sa_count());
    for (double& x : theta) x = rng.uniform(-1.0, 1.0);
    const double lambda = 0.4;
    const auto [q_hat, a_hat] =
        approx_q_and_advantage(CriticState{theta}, features, base, m);
    const PolicyLogits stepped = mirror_step(base, a_hat, {lambda, m.tau});

    // independent route through probability space: pi'(a|s) ~ pi(a|s) exp(-lambda a_hat)
    for (std::size_t s = 0; s < m.n_states; ++s) {
        numvec tilt(m.n_actions);
        double z = 0.0;
        for (std::size_t a = 0; a < m.n_actions; ++a) {
            tilt[a] = base.probabilities()(s, a) * std::exp(-lambda * a_hat(s, a));
            z += tilt[a];
        }
        for (std::size_t a = 0; a < m.n_actions; ++a)
            CHECK(stepped.probabilities()(s, a) == doctest::Approx(tilt[a] / z).epsilon(1e-11));
    }
}

TEST_CASE("consecutive KL respects the lambda/(1-lambda tau) |theta| bound") {
    const FiniteMdp m = simple_mdp(4, 3, 0.7, 1.2, 31);
    const FeatureMap features = FeatureMap::one_hot(4, 3);
    Rng rng(37);
    const double lambda = 0.5 / m.tau;
    for (int trial = 0; trial < 30; ++trial) {
        const PolicyLogits base = random_policy(rng, m, 1.5);
        numvec theta(m.sa_count());
        for (double& x : theta) x = rng.uniform(-2.0, 2.0);
        const auto [q_hat, a_hat] =
            approx_q_and_advantage(CriticState{theta}, features, base, m);
        const PolicyLogits stepped = mirror_step(base, a_hat, {lambda, m.tau});
        const KlDivergences kl = kl_divergences(stepped, base, m);
        const double bound = lambda / (1.0 - lambda * m.tau) * norm2(theta);
        for (double x : kl.kl_p_q) CHECK(x <= bound + 1e-10);
    }
}

TEST_CASE("the log-density recursion holds exactly along mirror steps") {
    const FiniteMdp m = simple_mdp(4, 4, 0.6, 1.0, 41);
    const FeatureMap features = FeatureMap::one_hot(4, 4);
    Rng rng(43);
    const double lambda = 0.35;
    for (int trial = 0; trial < 30; ++trial) {
        const PolicyLogits base = random_policy(rng, m, 1.5);
        numvec theta(m.sa_count());
        for (double& x : theta) x = rng.uniform(-2.0, 2.0);
        const auto [q_hat, a_hat] =
            approx_q_and_advantage(CriticState{theta}, features, base, m);
        const PolicyLogits stepped = mirror_step(base, a_hat, {lambda, m.tau});
        const LogDensityStats before = log_density_stats(base);
        const LogDensityStats after = log_density_stats(stepped);
        CHECK(after.sup_norm_l <=
              (1.0 - m.tau * lambda) * before.sup_norm_l + 2.0 * lambda * norm2(theta) + 1e-10);
    }
}
