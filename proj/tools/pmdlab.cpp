#include <CLI11.hpp>

#include <atomic>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "pmdlab/driver.hpp"
#include "pmdlab/generate.hpp"
#include "pmdlab/verifier.hpp"

namespace {

using nlohmann::json;
namespace fs = std::filesystem;
using namespace pmdlab;

json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open file: " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw std::runtime_error(path.string() + ": " + e.what());
    }
    return j;
}

void write_text_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open file for writing: " + path.string());
    out << text;
}

Instance load_instance(const fs::path& path) { return instance_from_json(read_json_file(path)); }

RunConfig load_config(const fs::path& path, const Instance& instance) {
    return config_from_json(read_json_file(path), instance.mdp, instance.features);
}

struct RunArtifacts {
    RunTrace trace;
    StepSizeCertificate certificate;
};

RunArtifacts execute_run(const Instance& instance, const RunConfig& config) {
    RunArtifacts artifacts{run_actor_critic(instance.mdp, instance.features, config),
                           build_certificate(instance.mdp, instance.features, config.lambda)};
    return artifacts;
}

void persist_run(const Instance& instance, const RunArtifacts& artifacts, const RunConfig& config,
                 const fs::path& out_dir) {
    fs::create_directories(out_dir);
    write_trace_csv(artifacts.trace, out_dir / "trace.csv");
    write_inner_json(artifacts.trace, out_dir / "inner.json");
    write_text_file(out_dir / "certificate.json",
                    certificate_to_json(artifacts.certificate).dump(2) + "\n");
    write_text_file(out_dir / "config.echo.json", config_to_json(config).dump(2) + "\n");

    // exact evaluation and occupancies of the last completed policy
    if (!artifacts.trace.policies.empty()) {
        const PolicyLogits& last = artifacts.trace.policies.back();
        json final_state;
        final_state["evaluation"] = evaluation_to_json(evaluate_policy(instance.mdp, last));
        final_state["occupancies"] = occupancies_to_json(occupancies(instance.mdp, last));
        write_text_file(out_dir / "final_evaluation.json", final_state.dump(2) + "\n");
    }
}

int cmd_run(const fs::path& instance_path, const fs::path& config_path, const fs::path& out_dir,
            const RunConfig& config, const Instance& instance) {
    (void)instance_path;
    (void)config_path;
    const RunArtifacts artifacts = execute_run(instance, config);
    persist_run(instance, artifacts, config, out_dir);
    if (artifacts.trace.aborted) {
        std::cerr << "run aborted: " << artifacts.trace.abort_reason << "\n";
        std::cerr << "partial trace with " << artifacts.trace.rows.size()
                  << " completed updates written to " << out_dir << "\n";
        return 1;
    }
    std::cout << "run complete: " << artifacts.trace.rows.size() << " policy updates, final gap "
              << artifacts.trace.rows.back().gap << ", trace in " << out_dir << "\n";
    return 0;
}

void cross_check_trace(const RunTrace& rerun, const std::vector<IterationRecord>& stored,
                       const fs::path& trace_path) {
    if (stored.size() != rerun.rows.size())
        throw std::runtime_error("trace file " + trace_path.string() + " has " +
                                 std::to_string(stored.size()) + " rows but the deterministic " +
                                 "re-run produced " + std::to_string(rerun.rows.size()));
    auto mismatch = [&](std::size_t n, const std::string& column) {
        throw std::runtime_error("trace file does not match the deterministic re-run at row " +
                                 std::to_string(n) + " column '" + column + "'");
    };
    for (std::size_t n = 0; n < stored.size(); ++n) {
        const IterationRecord& a = stored[n];
        const IterationRecord& b = rerun.rows[n];
        if (a.n != b.n) mismatch(n, "n");
        if (a.k_n != b.k_n) mismatch(n, "K_n");
        if (a.theta_norm != b.theta_norm) mismatch(n, "theta_norm");
        if (a.l_sup != b.l_sup) mismatch(n, "l_sup");
        if (a.v_rho != b.v_rho) mismatch(n, "v_rho");
        if (a.gap != b.gap) mismatch(n, "gap");
        if (a.critic_err != b.critic_err) mismatch(n, "critic_err");
        if (a.critic_err_pre != b.critic_err_pre) mismatch(n, "critic_err_pre");
        if (a.consec_kl != b.consec_kl) mismatch(n, "consec_kl");
        if (a.m_used != b.m_used) mismatch(n, "m_used");
    }
}

int cmd_verify(const Instance& instance, const RunConfig& config, const fs::path& trace_dir,
               const fs::path& out_path) {
    const fs::path trace_csv =
        fs::is_directory(trace_dir) ? trace_dir / "trace.csv" : trace_dir;
    const std::vector<IterationRecord> stored = read_trace_csv(trace_csv);

    // Runs are deterministic in (instance, config); re-running recovers the
    // policy and parameter snapshots the checks need and cross-checks the
    // stored rows on the way.
    const RunTrace trace = run_actor_critic(instance.mdp, instance.features, config);
    cross_check_trace(trace, stored, trace_csv);

    const fs::path inner_path = trace_csv.parent_path() / "inner.json";
    if (fs::exists(inner_path)) {
        const auto inner = read_inner_json(inner_path);
        if (inner.size() != trace.inner_errors.size())
            throw std::runtime_error("sidecar file does not match the deterministic re-run");
        for (std::size_t n = 0; n < inner.size(); ++n) {
            const InnerSeries& stored_err = inner[n].first;
            const InnerSeries& fresh_err = trace.inner_errors[n];
            bool same = stored_err.size() == fresh_err.size() &&
                        stored_err.prefix() == fresh_err.prefix() &&
                        stored_err.tail_value() == fresh_err.tail_value();
            if (!same)
                throw std::runtime_error(
                    "sidecar file does not match the deterministic re-run at update " +
                    std::to_string(n));
        }
    }

    const VerificationReport report = verify_run(instance.mdp, instance.features, config, trace);
    const json j = verification_to_json(report, trace);
    if (!out_path.empty()) write_text_file(out_path, j.dump(2) + "\n");

    std::size_t passed = 0, failed = 0, skipped = 0;
    for (const CheckReport& c : report.checks) {
        if (c.status == "pass") ++passed;
        if (c.status == "fail") ++failed;
        if (c.status == "skipped") ++skipped;
        std::cout << c.status << "  " << c.check_name;
        if (c.status == "fail" && c.first_violation_n)
            std::cout << "  (first violation at n=" << *c.first_violation_n << ", margin "
                      << c.worst_margin << ")";
        if (c.status == "skipped") std::cout << "  (" << c.skip_reason << ")";
        std::cout << "\n";
    }
    std::cout << passed << " passed, " << failed << " failed, " << skipped << " skipped\n";
    return report.exit_code();
}

int cmd_sweep(const Instance& instance, const json& config_json, const fs::path& out_dir,
              unsigned workers) {
    if (!config_json.contains("sweep"))
        throw std::runtime_error("config missing required field 'sweep'");
    const json& sweep = config_json.at("sweep");
    const auto h_values = sweep.at("h").get<numvec>();
    const auto lambda_values = sweep.at("lambda").get<numvec>();
    std::vector<json> schedule_specs;
    for (const auto& s : sweep.at("schedules")) schedule_specs.push_back(s);

    struct Job {
        RunConfig config;
        std::string schedule_label;
    };
    std::vector<Job> jobs;
    for (const double h : h_values)
        for (const double lambda : lambda_values)
            for (const json& sched : schedule_specs) {
                json merged = config_json;
                merged["h"] = h;
                merged["lambda"] = lambda;
                merged["schedule"] = sched;
                merged["enforce_certificate"] = false;  // sweeps may probe bad steps
                Job job;
                job.config = config_from_json(merged, instance.mdp, instance.features);
                job.schedule_label = job.config.schedule.name();
                jobs.push_back(std::move(job));
            }

    struct Row {
        std::string line;
    };
    std::vector<Row> rows(jobs.size());
    std::atomic<std::size_t> cursor{0};
    auto worker = [&]() {
        while (true) {
            const std::size_t i = cursor.fetch_add(1);
            if (i >= jobs.size()) return;
            const Job& job = jobs[i];
            const fs::path run_dir = out_dir / ("run_" + std::to_string(i));
            std::ostringstream line;
            try {
                const RunArtifacts artifacts = execute_run(instance, job.config);
                persist_run(instance, artifacts, job.config, run_dir);
                const VerificationReport report =
                    verify_run(instance.mdp, instance.features, job.config, artifacts.trace);
                write_text_file(run_dir / "verification.json",
                                verification_to_json(report, artifacts.trace).dump(2) + "\n");

                const StepSizeCertificate& cert = artifacts.certificate;
                const double applicable =
                    job.config.schedule.variant == ScheduleVariant::single_loop
                        ? cert.h_single_loop
                        : cert.h_doubleloop;
                double final_gap = std::numeric_limits<double>::quiet_NaN();
                double min_gap = std::numeric_limits<double>::quiet_NaN();
                if (!artifacts.trace.rows.empty()) {
                    final_gap = artifacts.trace.rows.back().gap;
                    min_gap = final_gap;
                    for (const IterationRecord& r : artifacts.trace.rows)
                        min_gap = std::min(min_gap, r.gap);
                }
                std::size_t failed = 0;
                for (const CheckReport& c : report.checks)
                    if (c.failed()) ++failed;
                line << i << ',' << job.config.h << ',' << job.config.lambda << ','
                     << job.schedule_label << ','
                     << (job.config.h <= applicable ? "true" : "false") << ','
                     << (cert.tau_lambda_ok ? "true" : "false") << ','
                     << (artifacts.trace.aborted ? "true" : "false") << ',' << final_gap << ','
                     << min_gap << ',' << failed;
            } catch (const std::exception& e) {
                line << i << ',' << job.config.h << ',' << job.config.lambda << ','
                     << job.schedule_label << ",error,error,true,nan,nan,nan";
                write_text_file(run_dir / "error.txt", std::string(e.what()) + "\n");
            }
            rows[i].line = line.str();
        }
    };

    std::vector<std::thread> pool;
    const unsigned count = std::max(1u, workers);
    for (unsigned t = 0; t < count; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();

    std::ostringstream csv;
    csv << "run_id,h,lambda,schedule,h_admissible,tau_lambda_ok,aborted,final_gap,min_gap,"
           "checks_failed\n";
    for (const Row& r : rows) csv << r.line << "\n";
    write_text_file(out_dir / "summary.csv", csv.str());
    std::cout << "sweep complete: " << jobs.size() << " runs, summary in "
              << (out_dir / "summary.csv") << "\n";
    return 0;
}

int cmd_report(const Instance& instance, const RunConfig& config, const fs::path& trace_dir,
               const fs::path& out_path) {
    const fs::path trace_csv =
        fs::is_directory(trace_dir) ? trace_dir / "trace.csv" : trace_dir;
    const std::vector<IterationRecord> rows = read_trace_csv(trace_csv);
    const StepSizeCertificate cert =
        build_certificate(instance.mdp, instance.features, config.lambda);
    const OptimalSolution opt = solve_optimal(instance.mdp, 1e-12);
    const ProofConstants xi = concentrability(instance.mdp, opt.pi_star);

    std::ostringstream os;
    os << "pmdlab run report\n";
    os << "=================\n";
    os << "instance: " << instance.mdp.n_states << " states, " << instance.mdp.n_actions
       << " actions, gamma=" << instance.mdp.gamma << ", tau=" << instance.mdp.tau << "\n";
    os << "run: h=" << config.h << ", lambda=" << config.lambda
       << ", schedule=" << config.schedule.name() << ", updates=" << config.n_policy_updates
       << ", eta=" << config.lambda / config.h << "\n";
    os << "certificate: lambda_beta=" << cert.lambda_beta << ", Gamma=" << cert.gamma_const
       << ", h_single_loop=" << cert.h_single_loop << ", h_kl_stability=" << cert.h_kl_stability
       << ", h_kl_stability_stated=" << cert.h_kl_stability_stated << ", h_doubleloop=" << cert.h_doubleloop
       << ", cond_32gamma=" << (cert.cond_32gamma ? "true" : "false") << "\n";
    os << "concentrability: xi_statement=" << xi.xi_statement << ", xi_proof=" << xi.xi_proof
       << "\n\n";

    const double rate = config.schedule.variant == ScheduleVariant::linear &&
                                std::isfinite(xi.xi_statement)
                            ? std::min(1.0 / xi.xi_statement, config.schedule.c)
                            : 0.0;
    os << "plot-ready columns\n";
    os << "n gap min_gap n_times_min_gap gap_exp_comp m_used\n";
    double min_gap = std::numeric_limits<double>::infinity();
    for (const IterationRecord& r : rows) {
        min_gap = std::min(min_gap, r.gap);
        const double gap_pos = std::max(r.gap, 0.0);
        const double comp =
            gap_pos == 0.0 ? 0.0 : std::exp(std::log(gap_pos) + rate * double(r.n));
        os << r.n << ' ' << r.gap << ' ' << min_gap << ' ' << double(r.n + 1) * min_gap << ' '
           << comp << ' ' << r.m_used << "\n";
    }

    if (out_path.empty())
        std::cout << os.str();
    else
        write_text_file(out_path, os.str());
    return 0;
}

/// Demo bundle: instance plus a run config whose step sizes are derived from
/// the instance's own certificate.
void write_demo(const std::string& name, const fs::path& out_dir) {
    Instance instance = name == "6x4"      ? demo_tabular_6x4()
                        : name == "4x3"    ? demo_linear_4x3()
                        : name == "2cycle" ? demo_two_state_cycle()
                                           : throw std::runtime_error(
                                                 "unknown demo '" + name +
                                                 "' (expected 6x4, 4x3 or 2cycle)");
    fs::create_directories(out_dir);
    write_text_file(out_dir / "instance.json", instance_to_json(instance).dump(2) + "\n");

    const StepSizeCertificate cert = build_certificate(instance.mdp, instance.features);
    RunConfig config;
    config.theta0.assign(instance.features.dim(), 0.0);
    config.pi0_logits = Matrix(instance.mdp.n_states, instance.mdp.n_actions, 0.0);
    config.enforce_certificate = true;
    if (name == "6x4") {
        config.h = 0.99 * cert.h_single_loop;
        config.lambda = 0.9 / instance.mdp.tau;
        config.n_policy_updates = 120;
        config.schedule = ScheduleKind::logarithmic(
            schedule_constant(instance.mdp, cert, config.h, config.theta0).c);
    } else if (name == "4x3") {
        config.h = 0.99 * cert.h_single_loop;
        config.lambda = 0.5 / instance.mdp.tau;
        config.n_policy_updates = 250;
        config.schedule = ScheduleKind::single_loop();
    } else {
        config.h = 0.99 * cert.h_single_loop;
        config.lambda = 0.5 / instance.mdp.tau;
        config.n_policy_updates = 150;
        config.schedule = ScheduleKind::constant(25);
    }
    write_text_file(out_dir / "config.json", config_to_json(config).dump(2) + "\n");
    std::cout << "demo '" << name << "' written to " << out_dir << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"pmdlab: mirror-descent actor-critic laboratory for entropy-regularised MDPs"};
    app.set_help_flag("--help", "print help");  // frees -h / --h for the step-size override
    app.require_subcommand(1);

    // gen
    auto* gen = app.add_subcommand("gen", "generate a seeded instance file or a bundled demo");
    std::uint64_t seed = 1;
    std::size_t n_states = 4, n_actions = 3, rank = 2;
    std::string feature_kind = "onehot", demo_name;
    double gen_gamma = 0.5, gen_tau = 1.0;
    std::string gen_out;
    gen->add_option("--seed", seed, "instance seed");
    gen->add_option("--states", n_states, "number of states");
    gen->add_option("--actions", n_actions, "number of actions");
    gen->add_option("--features", feature_kind, "onehot | random_rank | linear_mdp");
    gen->add_option("--rank", rank, "feature dimension for random_rank / linear_mdp");
    gen->add_option("--gamma", gen_gamma, "discount factor");
    gen->add_option("--tau", gen_tau, "regularisation weight");
    gen->add_option("--demo", demo_name, "write a bundled demo (6x4 | 4x3 | 2cycle) instead");
    gen->add_option("--out", gen_out, "output file (or directory for --demo)")->required();

    // run
    auto* run = app.add_subcommand("run", "execute an actor-critic run and write its trace");
    std::string run_instance, run_config, run_out;
    double override_h = -1.0, override_lambda = -1.0, override_c = -1.0;
    long long override_updates = -1, override_m = -1;
    std::string override_schedule;
    bool override_enforce = false, override_no_enforce = false;
    run->add_option("--instance", run_instance, "instance JSON")->required();
    run->add_option("--config", run_config, "run config JSON")->required();
    run->add_option("--out", run_out, "output directory")->required();
    run->add_option("--h", override_h, "override critic step size");
    run->add_option("--lambda", override_lambda, "override actor step size");
    run->add_option("--updates", override_updates, "override number of policy updates");
    run->add_option("--schedule", override_schedule,
                    "override schedule kind (single_loop|constant|logarithmic|linear)");
    run->add_option("--schedule-c", override_c, "override schedule constant c");
    run->add_option("--schedule-m", override_m, "override constant schedule M");
    run->add_flag("--enforce-certificate", override_enforce, "require certified step sizes");
    run->add_flag("--no-enforce-certificate", override_no_enforce, "drop the certificate gate");

    // verify
    auto* verify = app.add_subcommand("verify", "check every certificate against a stored trace");
    std::string verify_instance, verify_config, verify_trace, verify_out;
    verify->add_option("--instance", verify_instance, "instance JSON")->required();
    verify->add_option("--config", verify_config, "run config JSON")->required();
    verify->add_option("--trace", verify_trace, "trace directory or trace.csv")->required();
    verify->add_option("--out", verify_out, "verification report JSON");

    // sweep
    auto* sweep = app.add_subcommand("sweep", "grid of runs over (h, lambda, schedule)");
    std::string sweep_instance, sweep_config, sweep_out;
    unsigned workers = 4;
    sweep->add_option("--instance", sweep_instance, "instance JSON")->required();
    sweep->add_option("--config", sweep_config, "config JSON with a 'sweep' section")->required();
    sweep->add_option("--out", sweep_out, "output directory")->required();
    sweep->add_option("--workers", workers, "parallel workers");

    // report
    auto* report = app.add_subcommand("report", "human-readable summary of a stored trace");
    std::string report_instance, report_config, report_trace, report_out;
    report->add_option("--instance", report_instance, "instance JSON")->required();
    report->add_option("--config", report_config, "run config JSON")->required();
    report->add_option("--trace", report_trace, "trace directory or trace.csv")->required();
    report->add_option("--out", report_out, "output file (stdout when omitted)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            if (!demo_name.empty()) {
                write_demo(demo_name, gen_out);
                return 0;
            }
            GenSpec spec;
            spec.seed = seed;
            spec.n_states = n_states;
            spec.n_actions = n_actions;
            spec.kind = feature_kind_from_name(feature_kind);
            spec.rank = rank;
            spec.gamma = gen_gamma;
            spec.tau = gen_tau;
            const Instance instance = generate_instance(spec);
            write_text_file(gen_out, instance_to_json(instance).dump(2) + "\n");
            std::cout << "instance written to " << gen_out << "\n";
            return 0;
        }
        if (run->parsed()) {
            const Instance instance = load_instance(run_instance);
            json config_json = read_json_file(run_config);
            if (override_h > 0) config_json["h"] = override_h;
            if (override_lambda > 0) config_json["lambda"] = override_lambda;
            if (override_updates > 0) config_json["n_policy_updates"] = override_updates;
            if (!override_schedule.empty()) config_json["schedule"]["kind"] = override_schedule;
            if (override_c > 0) config_json["schedule"]["c"] = override_c;
            if (override_m > 0) config_json["schedule"]["m"] = override_m;
            if (override_enforce) config_json["enforce_certificate"] = true;
            if (override_no_enforce) config_json["enforce_certificate"] = false;
            const RunConfig config =
                config_from_json(config_json, instance.mdp, instance.features);
            return cmd_run(run_instance, run_config, run_out, config, instance);
        }
        if (verify->parsed()) {
            const Instance instance = load_instance(verify_instance);
            const RunConfig config = load_config(verify_config, instance);
            return cmd_verify(instance, config, verify_trace, verify_out);
        }
        if (sweep->parsed()) {
            const Instance instance = load_instance(sweep_instance);
            return cmd_sweep(instance, read_json_file(sweep_config), sweep_out, workers);
        }
        if (report->parsed()) {
            const Instance instance = load_instance(report_instance);
            const RunConfig config = load_config(report_config, instance);
            return cmd_report(instance, config, report_trace, report_out);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
