#pragma once

#include <cstdint>

#include <json.hpp>

#include "pmdlab/critic.hpp"
#include "pmdlab/mdp.hpp"

namespace pmdlab {

/// splitmix64; used instead of <random> distributions so that generated
/// instances are bit-identical across standard library implementations.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    /// uniform in [0, 1)
    double next_double() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  private:
    std::uint64_t state_;
};

enum class FeatureKind { one_hot, random_rank, linear_mdp };

struct GenSpec {
    std::uint64_t seed = 1;
    std::size_t n_states = 2;
    std::size_t n_actions = 2;
    FeatureKind kind = FeatureKind::one_hot;
    std::size_t rank = 1;  // feature dimension for random_rank / linear_mdp
    double gamma = 0.5;
    double tau = 1.0;
};

struct Instance {
    FiniteMdp mdp;
    FeatureMap features;
};

/// Deterministic seeded instance. The linear_mdp kind factorises the kernel as
/// P(s'|s,a) = <phi(s,a), psi(s')> with simplex-weight features and
/// probability-vector factors, and puts the cost in the feature span, so
/// Q^pi_tau-realisability holds exactly for every admissible policy at
/// dimension rank < |S||A|.
Instance generate_instance(const GenSpec& spec);

/// Random bounded logits for property tests, entries uniform in [-scale, scale].
Matrix random_logits(Rng& rng, std::size_t n_states, std::size_t n_actions, double scale);

/// Bundled demo instances.
Instance demo_tabular_6x4();
Instance demo_linear_4x3();
Instance demo_two_state_cycle();

/// Instance for the concentrability rate study: a seeded tabular MDP whose rho
/// is the stationary law of pi* deflated on its heaviest state until
/// max_s d^pi*_rho(s) / rho(s) lands in [xi_lo, xi_hi].
Instance demo_concentrable(double xi_lo = 2.15, double xi_hi = 2.35);

nlohmann::json instance_to_json(const Instance& instance);
Instance instance_from_json(const nlohmann::json& j);

std::string feature_kind_name(FeatureKind kind);
FeatureKind feature_kind_from_name(const std::string& name);

}  // namespace pmdlab
