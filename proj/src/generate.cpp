#include "pmdlab/generate.hpp"

#include <cmath>
#include <stdexcept>

#include "pmdlab/oracle.hpp"

namespace pmdlab {

namespace {

numvec random_probability_vector(Rng& rng, std::size_t n, double floor_weight) {
    numvec v(n);
    double sum = 0.0;
    for (double& x : v) {
        x = floor_weight + rng.next_double();
        sum += x;
    }
    for (double& x : v) x /= sum;
    return v;
}

FiniteMdp base_mdp(const GenSpec& spec) {
    FiniteMdp m;
    m.n_states = spec.n_states;
    m.n_actions = spec.n_actions;
    m.gamma = spec.gamma;
    m.tau = spec.tau;
    m.mu.assign(spec.n_actions, 1.0 / double(spec.n_actions));
    m.rho.assign(spec.n_states, 1.0 / double(spec.n_states));
    m.beta = Matrix(spec.n_states, spec.n_actions, 1.0 / double(spec.n_states * spec.n_actions));
    m.transition = Matrix(spec.n_states * spec.n_actions, spec.n_states);
    m.cost = Matrix(spec.n_states, spec.n_actions);
    return m;
}

}  // namespace

Instance generate_instance(const GenSpec& spec) {
    if (spec.n_states < 1 || spec.n_actions < 1)
        throw std::invalid_argument("generate_instance: sizes must be at least 1");
    if (!(spec.gamma > 0.0 && spec.gamma < 1.0))
        throw std::invalid_argument("generate_instance: gamma must lie in (0,1)");
    if (!(spec.tau > 0.0)) throw std::invalid_argument("generate_instance: tau must be positive");

    Rng rng(spec.seed);
    FiniteMdp m = base_mdp(spec);
    const std::size_t S = spec.n_states, A = spec.n_actions, SA = S * A;

    switch (spec.kind) {
        case FeatureKind::one_hot: {
            for (std::size_t i = 0; i < SA; ++i) {
                const numvec row = random_probability_vector(rng, S, 0.1);
                for (std::size_t sp = 0; sp < S; ++sp) m.transition(i, sp) = row[sp];
            }
            for (double& c : m.cost.data()) c = rng.next_double();
            return Instance{std::move(m), FeatureMap::one_hot(S, A)};
        }
        case FeatureKind::random_rank: {
            if (spec.rank < 1 || spec.rank > SA)
                throw std::invalid_argument(
                    "generate_instance: random_rank requires 1 <= rank <= n_states*n_actions");
            for (std::size_t i = 0; i < SA; ++i) {
                const numvec row = random_probability_vector(rng, S, 0.1);
                for (std::size_t sp = 0; sp < S; ++sp) m.transition(i, sp) = row[sp];
            }
            for (double& c : m.cost.data()) c = rng.next_double();
            Matrix phi(SA, spec.rank);
            for (double& x : phi.data()) x = rng.uniform(-1.0, 1.0);
            return Instance{std::move(m), FeatureMap(std::move(phi))};
        }
        case FeatureKind::linear_mdp: {
            if (spec.rank < 1 || spec.rank > SA)
                throw std::invalid_argument(
                    "generate_instance: linear_mdp requires 1 <= rank <= n_states*n_actions");
            // Simplex-weight features and probability factors make every
            // transition row a convex combination of the psi_j.
            Matrix phi(SA, spec.rank);
            for (std::size_t i = 0; i < SA; ++i) {
                const numvec w = random_probability_vector(rng, spec.rank, 0.05);
                for (std::size_t j = 0; j < spec.rank; ++j) phi(i, j) = w[j];
            }
            std::vector<numvec> psi(spec.rank);
            for (std::size_t j = 0; j < spec.rank; ++j)
                psi[j] = random_probability_vector(rng, S, 0.05);
            numvec cost_weights(spec.rank);
            for (double& x : cost_weights) x = rng.next_double();

            for (std::size_t s = 0; s < S; ++s)
                for (std::size_t a = 0; a < A; ++a) {
                    const std::size_t i = m.sa_index(s, a);
                    double c = 0.0;
                    for (std::size_t j = 0; j < spec.rank; ++j) {
                        c += phi(i, j) * cost_weights[j];
                        for (std::size_t sp = 0; sp < S; ++sp)
                            m.transition(i, sp) += phi(i, j) * psi[j][sp];
                    }
                    m.cost(s, a) = c;
                }
            return Instance{std::move(m), FeatureMap(std::move(phi))};
        }
    }
    throw std::logic_error("generate_instance: unknown feature kind");
}

Matrix random_logits(Rng& rng, std::size_t n_states, std::size_t n_actions, double scale) {
    Matrix f(n_states, n_actions);
    for (double& x : f.data()) x = rng.uniform(-scale, scale);
    return f;
}

Instance demo_tabular_6x4() {
    GenSpec spec;
    spec.seed = 240601;
    spec.n_states = 6;
    spec.n_actions = 4;
    spec.kind = FeatureKind::one_hot;
    spec.gamma = 0.05;
    spec.tau = 1.0;
    return generate_instance(spec);
}

Instance demo_linear_4x3() {
    GenSpec spec;
    spec.seed = 430902;
    spec.n_states = 4;
    spec.n_actions = 3;
    spec.kind = FeatureKind::linear_mdp;
    spec.rank = 2;
    spec.gamma = 0.4;
    spec.tau = 1.0;
    return generate_instance(spec);
}

Instance demo_two_state_cycle() {
    FiniteMdp m;
    m.n_states = 2;
    m.n_actions = 2;
    m.gamma = 0.5;
    m.tau = 0.7;
    m.mu = {0.5, 0.5};
    m.rho = {1.0, 0.0};
    m.beta = Matrix(2, 2, 0.25);
    m.transition = Matrix(4, 2, 0.0);
    for (std::size_t a = 0; a < 2; ++a) {
        m.transition(m.sa_index(0, a), 1) = 1.0;  // s0 -> s1 under every action
        m.transition(m.sa_index(1, a), 0) = 1.0;  // s1 -> s0
    }
    m.cost = Matrix(2, 2);
    m.cost(0, 0) = m.cost(0, 1) = 1.0;
    m.cost(1, 0) = m.cost(1, 1) = 0.0;
    return Instance{std::move(m), FeatureMap::one_hot(2, 2)};
}

Instance demo_concentrable(double xi_lo, double xi_hi) {
    GenSpec spec;
    spec.seed = 530317;
    spec.n_states = 5;
    spec.n_actions = 3;
    spec.kind = FeatureKind::one_hot;
    spec.gamma = 0.35;
    spec.tau = 1.0;
    Instance instance = generate_instance(spec);
    FiniteMdp& m = instance.mdp;

    const OptimalSolution opt = solve_optimal(m, 1e-13);

    // Stationary law of P_{pi*} as the fixed point of rho -> d^{pi*}_rho.
    numvec stationary = m.rho;
    for (int it = 0; it < 400; ++it)
        stationary = state_occupancy(m, opt.pi_star, stationary);

    std::size_t heavy = 0;
    for (std::size_t s = 1; s < m.n_states; ++s)
        if (stationary[s] > stationary[heavy]) heavy = s;

    auto xi_for = [&](double deflate) {
        numvec rho = stationary;
        rho[heavy] *= deflate;
        double sum = 0.0;
        for (double x : rho) sum += x;
        for (double& x : rho) x /= sum;
        const numvec d = state_occupancy(m, opt.pi_star, rho);
        double xi = 0.0;
        for (std::size_t s = 0; s < m.n_states; ++s) xi = std::max(xi, d[s] / rho[s]);
        return std::pair<double, numvec>(xi, rho);
    };

    // xi(1) = 1 and xi grows without bound as the heavy state is deflated;
    // bisect the deflation factor into the requested band.
    double lo = 1e-6, hi = 1.0;
    numvec chosen_rho = stationary;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        const auto [xi, rho] = xi_for(mid);
        if (xi > xi_hi) {
            lo = mid;
        } else if (xi < xi_lo) {
            hi = mid;
        } else {
            chosen_rho = rho;
            break;
        }
        chosen_rho = rho;
    }
    m.rho = chosen_rho;
    return instance;
}

nlohmann::json instance_to_json(const Instance& instance) {
    nlohmann::json j = mdp_to_json(instance.mdp);
    j["features"] = features_to_json(instance.features);
    return j;
}

Instance instance_from_json(const nlohmann::json& j) {
    FiniteMdp mdp = mdp_from_json(j);
    if (j.contains("features")) {
        FeatureMap features = features_from_json(j.at("features"));
        if (features.phi().rows() != mdp.sa_count())
            throw std::runtime_error("instance JSON: feature rows do not match n_states*n_actions");
        return Instance{std::move(mdp), std::move(features)};
    }
    const std::size_t S = mdp.n_states, A = mdp.n_actions;
    return Instance{std::move(mdp), FeatureMap::one_hot(S, A)};
}

std::string feature_kind_name(FeatureKind kind) {
    switch (kind) {
        case FeatureKind::one_hot: return "onehot";
        case FeatureKind::random_rank: return "random_rank";
        case FeatureKind::linear_mdp: return "linear_mdp";
    }
    return "onehot";
}

FeatureKind feature_kind_from_name(const std::string& name) {
    if (name == "onehot") return FeatureKind::one_hot;
    if (name == "random_rank") return FeatureKind::random_rank;
    if (name == "linear_mdp") return FeatureKind::linear_mdp;
    throw std::invalid_argument("unknown feature kind: " + name);
}

}  // namespace pmdlab
