#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "pmdlab/actor.hpp"
#include "pmdlab/critic.hpp"
#include "pmdlab/mdp.hpp"
#include "pmdlab/oracle.hpp"

namespace pmdlab {

enum class ScheduleVariant { single_loop, constant_m, logarithmic, linear };

/// Number of inner TD steps per policy update. M(n) is clamped to >= 1 under
/// every variant and the theorem formulas take the smallest admissible
/// integer (ceiling).
struct ScheduleKind {
    ScheduleVariant variant = ScheduleVariant::single_loop;
    std::size_t m = 1;  // constant_m
    double c = 0.0;     // logarithmic / linear

    static ScheduleKind single_loop() { return {ScheduleVariant::single_loop, 1, 0.0}; }
    static ScheduleKind constant(std::size_t m);
    static ScheduleKind logarithmic(double c);
    static ScheduleKind linear(double c);

    std::string name() const;
};

std::size_t m_schedule(const ScheduleKind& kind, std::size_t n, double h, double gamma_const);

/// The constant for the logarithmically growing step schedule together with the
/// delta_1 / delta_2 quantities from its derivation, evaluated at the run's critic
/// step size. Throws std::invalid_argument("h too large for delta2 formula")
/// when Gamma - 3h(1+gamma)^2 <= 0.
struct ScheduleConstant {
    double c = 0.0;
    double delta1 = 0.0;
    double delta2 = 0.0;
    double c_gamma = 0.0;  // max{1, 2*gamma/(1-gamma)}
};

ScheduleConstant schedule_constant(const FiniteMdp& mdp, const StepSizeCertificate& cert,
                                   double h, const numvec& theta0);

struct RunConfig {
    double h = 0.0;
    double lambda = 0.0;
    std::size_t n_policy_updates = 0;
    ScheduleKind schedule = ScheduleKind::single_loop();
    numvec theta0;
    Matrix pi0_logits;
    bool enforce_certificate = false;
};

/// A per-update inner sequence of logical length M(n)+1. Once the inner TD
/// map reaches a floating-point fixed point every further step reproduces the
/// same iterate exactly, so the remaining entries are stored as a constant
/// tail instead of being materialised.
class InnerSeries {
  public:
    void push(double v) { prefix_.push_back(v); }
    void set_tail(double v, std::size_t count) {
        tail_value_ = v;
        tail_count_ = count;
    }

    std::size_t size() const { return prefix_.size() + tail_count_; }
    double at(std::size_t k) const { return k < prefix_.size() ? prefix_[k] : tail_value_; }
    double front() const { return at(0); }
    double back() const { return at(size() - 1); }

    const numvec& prefix() const { return prefix_; }
    double tail_value() const { return tail_value_; }
    std::size_t tail_count() const { return tail_count_; }

    /// Visits every logically distinct adjacent pair (k, k+1): all prefix
    /// pairs, the prefix/tail boundary, and one representative tail pair.
    template <typename Fn>
    void for_each_step(Fn&& fn) const {
        for (std::size_t k = 0; k + 1 < prefix_.size(); ++k) fn(k, prefix_[k], prefix_[k + 1]);
        if (tail_count_ > 0 && !prefix_.empty())
            fn(prefix_.size() - 1, prefix_.back(), tail_value_);
        if (tail_count_ > 1) fn(prefix_.size(), tail_value_, tail_value_);
    }

    /// Visits every logically distinct value: the prefix and one tail entry.
    template <typename Fn>
    void for_each_value(Fn&& fn) const {
        for (std::size_t k = 0; k < prefix_.size(); ++k) fn(k, prefix_[k]);
        if (tail_count_ > 0) fn(prefix_.size(), tail_value_);
    }

  private:
    numvec prefix_;
    double tail_value_ = 0.0;
    std::size_t tail_count_ = 0;
};

struct IterationRecord {
    std::size_t n = 0;
    double k_n = 0.0;            // sup-state KL(pi^n | mu)
    double theta_norm = 0.0;     // |theta^n|_2
    double l_sup = 0.0;          // |l_n|_inf
    double v_rho = 0.0;          // V^{pi^n}_tau(rho)
    double gap = 0.0;            // v_rho - V*_tau(rho)
    double critic_err = 0.0;     // |theta^{n+1} - theta_{pi^n}|_2
    double critic_err_pre = 0.0; // |theta^n - theta_{pi^n}|_2
    double consec_kl = 0.0;      // sup_s KL(pi^{n+1} | pi^n)(s)
    std::size_t m_used = 0;      // M(n)
};

struct RunTrace {
    std::vector<IterationRecord> rows;
    std::vector<InnerSeries> inner_errors;  // |theta^{n,k} - theta_{pi^n}|_2, k = 0..M(n)
    std::vector<InnerSeries> inner_gnorms;  // |g(theta^{n,k}, pi^n)|_2, k = 0..M(n)

    // Snapshots for verification; not part of the CSV surface.
    std::vector<PolicyLogits> policies;  // pi^0 .. pi^N
    std::vector<numvec> thetas;          // theta^0 .. theta^N
    std::vector<numvec> theta_pi;        // theta_{pi^n}
    numvec realisability_residuals;      // exact_theta residual at pi^n
    std::vector<numvec> v_vectors;       // V^{pi^n} pointwise, n = 0..N
    std::vector<Matrix> q_matrices;      // Q^{pi^n}, n = 0..N

    numvec v_star;
    double v_star_rho = 0.0;
    double eta = 0.0;  // lambda / h

    bool aborted = false;
    std::string abort_reason;
    std::size_t abort_iteration = 0;

    std::size_t completed_updates() const { return rows.size(); }
};

/// Runs the actor-critic scheme: M(n) frozen-occupancy TD steps on theta
/// followed by the closed-form mirror step, recording the full trace. The run
/// is deterministic given (mdp, features, config); a non-finite or exploding
/// iterate aborts with a partial trace naming the quantity that diverged.
RunTrace run_actor_critic(const FiniteMdp& mdp, const FeatureMap& features,
                          const RunConfig& config);

// --- persistence ---------------------------------------------------------

extern const std::vector<std::string> kTraceColumns;

void write_trace_csv(const RunTrace& trace, const std::filesystem::path& path);
void write_inner_json(const RunTrace& trace, const std::filesystem::path& path);

/// Schema-checked reads; a missing column or malformed row raises
/// std::runtime_error naming the offending column / line.
std::vector<IterationRecord> read_trace_csv(const std::filesystem::path& path);
std::vector<std::pair<InnerSeries, InnerSeries>> read_inner_json(
    const std::filesystem::path& path);

nlohmann::json config_to_json(const RunConfig& config);
RunConfig config_from_json(const nlohmann::json& j, const FiniteMdp& mdp,
                           const FeatureMap& features);

}  // namespace pmdlab
