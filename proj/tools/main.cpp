// crlhf command-line driver: generate, fit, solve, certify, evaluate, sweep.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "crlhf/certificates.hpp"
#include "crlhf/core.hpp"
#include "crlhf/dual.hpp"
#include "crlhf/error.hpp"
#include "crlhf/io.hpp"
#include "crlhf/kernels.hpp"
#include "crlhf/mle.hpp"
#include "crlhf/solver.hpp"
#include "crlhf/synthetic.hpp"

namespace fs = std::filesystem;
using namespace crlhf;

namespace {

constexpr const char* kVersion = "0.1.0";

struct Options {
  std::string command;
  std::string preset = "none";
  std::uint64_t seed = 0;
  std::string out = ".";
  std::string in;  // defaults to out

  // Input file overrides; relative names resolve against --in.
  std::string features = "features.csv";
  std::string preferences = "preferences.csv";
  std::string reference = "reference.csv";
  std::string thetas = "thetas.csv";
  std::string truth = "thetas_true.csv";
  std::string problem = "problem.txt";
  std::string solution = "solution.txt";
  std::string policy = "policy.csv";
  bool renormalize = true;

  // generate
  std::size_t prompts = 100;
  std::size_t actions = 10;
  std::size_t dim = 8;
  std::size_t constraints = 1;
  double w = 0.6;
  double eta0 = 1.0;
  std::size_t n = 3000;
  double frac = 0.7;
  double lambda_hi = 5.0;
  std::string calibration = "exact";
  std::size_t calibration_samples = 10000;

  // problem
  double eta = 0.05;
  std::vector<double> jmin;
  std::string divergence = "kl";
  double alpha_div = 2.0;

  // fit and certificates
  double lambda_reg = 0.01;
  double delta = 0.05;
  double c = 1.0;
  double ck2 = 1.0;
  double bound_b = 0.0;
  std::string envelopes = "data_dependent";

  // solver
  double radius = 100.0;
  std::size_t iterations = 1000;
  std::string step = "fixed";
  double alpha = 0.0;

  // sweep
  std::vector<double> w_values{0.3, 0.6, 0.9};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::vector<std::size_t> sizes{300, 600, 900, 1200, 1500, 1800, 2100, 2400, 2700, 3000};
  std::size_t threads = 1;
};

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::io: return 4;
    case ErrorKind::numerical:
    case ErrorKind::infeasible: return 3;
    default: return 2;
  }
}

class Run {
 public:
  Run(const Options& o, std::string manifest_text)
      : o_(o), out_(o.out), in_(o.in.empty() ? o.out : o.in), manifest_text_(std::move(manifest_text)) {}

  void execute() {
    std::error_code ec;
    fs::create_directories(out_, ec);
    require(!ec && fs::is_directory(out_), ErrorKind::io, "cannot create output directory '" + out_.string() + "'");
    manifest_name_ = "manifest_" + o_.command + ".txt";
    if (o_.command == "generate") generate();
    else if (o_.command == "fit") fit();
    else if (o_.command == "solve") solve();
    else if (o_.command == "certify") certify_cmd();
    else if (o_.command == "evaluate") evaluate();
    else if (o_.command == "sweep") sweep();
    write_manifest();
  }

 private:
  fs::path input(const std::string& name) const {
    const fs::path p(name);
    return p.is_absolute() ? p : in_ / p;
  }

  void emit(const std::string& name, const std::string& body) {
    io::write_text(out_ / name, body, manifest_name_);
    outputs_.push_back(name);
  }

  void warn(const std::vector<std::string>& warnings) {
    for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
  }

  Divergence divergence() const {
    if (o_.divergence == "kl") return Divergence::kl();
    if (o_.divergence == "chi_square") return Divergence::chi_square();
    return Divergence::alpha(o_.alpha_div);
  }

  ProblemSpec problem_spec(std::size_t constraints) {
    ProblemSpec spec{o_.eta, o_.jmin, divergence()};
    const fs::path p = input(o_.problem);
    if (fs::exists(p)) {
      const auto kv = io::read_key_values(p);
      if (!explicit_eta_) spec.eta = kv.get_double("eta");
      if (o_.jmin.empty()) {
        spec.j_min.clear();
        for (std::size_t k = 1; kv.get("j_min_" + std::to_string(k)); ++k) {
          spec.j_min.push_back(kv.get_double("j_min_" + std::to_string(k)));
        }
      }
    }
    require(spec.j_min.size() == constraints, ErrorKind::validation,
            "need one J_min per constraint oracle (" + std::to_string(constraints) +
                "); pass --jmin or provide " + o_.problem);
    spec.validate();
    return spec;
  }

  io::ExternalData load_data() {
    auto ext = io::ingest_external(input(o_.features), input(o_.preferences), reference_path(),
                                   o_.renormalize);
    warn(ext.warnings);
    return ext;
  }

  std::optional<fs::path> reference_path() const {
    const fs::path p = input(o_.reference);
    if (fs::exists(p)) return p;
    return std::nullopt;
  }

  FeatureTable load_table() {
    auto f = io::parse_features(io::read_text(input(o_.features)), o_.features, o_.renormalize);
    warn(f.warnings);
    return std::move(f.table);
  }

  Policy load_reference(const FeatureTable& table) {
    const auto p = reference_path();
    if (!p) {
      warn({"no reference policy given; using uniform"});
      return Policy::uniform(table.num_prompts(), table.num_actions());
    }
    return io::parse_policy(io::read_text(*p), p->string(), table.num_prompts(), table.num_actions());
  }

  std::vector<std::vector<double>> load_thetas(const std::string& name, std::size_t dim) {
    auto th = io::parse_thetas(io::read_text(input(name)), name);
    require(th.size() >= 2, ErrorKind::validation, name + ": need a target and at least one constraint oracle");
    for (const auto& t : th) require(t.size() == dim, ErrorKind::shape, name + ": dimension does not match the features");
    return th;
  }

  DualProblem make_problem(const ProblemSpec& spec, const Policy& pi0, const FeatureTable& table,
                           const std::vector<std::vector<double>>& th) {
    const std::vector<std::vector<double>> cons(th.begin() + 1, th.end());
    return DualProblem::from_thetas(spec, pi0, table, th[0], cons);
  }

  SyntheticConfig synthetic() const {
    SyntheticConfig sc;
    sc.seed = o_.seed;
    sc.num_prompts = o_.prompts;
    sc.num_actions = o_.actions;
    sc.dim = o_.dim;
    sc.num_constraints = o_.constraints;
    sc.w = o_.w;
    sc.eta0 = o_.eta0;
    sc.n_max = o_.n;
    sc.frac = o_.frac;
    sc.lambda_hi = o_.lambda_hi;
    sc.calibration_samples = o_.calibration_samples;
    return sc;
  }

  CalibrationMode calibration_mode() const {
    return o_.calibration == "sampled" ? CalibrationMode::sampled : CalibrationMode::exact;
  }

  void generate() {
    const SyntheticConfig sc = synthetic();
    const SyntheticInstance inst = generate_instance(sc);
    emit("features.csv", io::features_csv(inst.table));
    emit("reference.csv", io::policy_csv(inst.pi0));
    emit("thetas_true.csv", io::thetas_csv(inst.thetas));
    emit("preferences.csv", io::preferences_csv(sample_dataset(inst, o_.n, o_.seed)));
    io::KeyValues kv;
    kv.set("eta", o_.eta);
    kv.set("divergence", o_.divergence);
    for (std::size_t k = 0; k < sc.num_constraints; ++k) {
      const auto cal = calibrate_jmin(inst, o_.eta, sc.frac, sc.lambda_hi, k, calibration_mode(),
                                      sc.calibration_samples, o_.seed);
      const std::string id = std::to_string(k + 1);
      kv.set("j_min_" + id, cal.j_min);
      kv.set("e0_" + id, cal.e0);
      kv.set("e_hi_" + id, cal.e_hi);
    }
    kv.set("calibration", o_.calibration);
    emit("problem.txt", kv.to_string());
  }

  void fit() {
    const auto ext = load_data();
    const DifferenceMatrix deltas = build_differences(ext.data, ext.table);
    const CovarianceBundle cov = covariance_bundle(deltas, o_.lambda_reg);
    MleOptions opts;
    opts.lambda_reg = o_.lambda_reg;
    std::vector<std::vector<double>> thetas;
    io::KeyValues kv;
    kv.set("n", std::to_string(ext.data.size()));
    kv.set("dim", std::to_string(ext.table.dim()));
    kv.set("lambda_reg", o_.lambda_reg);
    kv.set("sample_min_eig", cov.min_eig);
    kv.set("sample_max_eig", cov.max_eig);
    for (std::size_t k = 0; k < ext.data.num_oracles(); ++k) {
      const MleFit f = fit_mle(deltas, ext.data.labels_for(k), opts);
      const std::string id = std::to_string(k);
      kv.set("oracle_" + id + "_objective", f.neg_loglik);
      kv.set("oracle_" + id + "_grad_norm", f.grad_norm);
      kv.set("oracle_" + id + "_iterations", std::to_string(f.iterations));
      kv.set("oracle_" + id + "_converged", f.converged ? "1" : "0");
      thetas.push_back(f.theta_hat);
    }
    emit("thetas.csv", io::thetas_csv(thetas));
    emit("fit.txt", kv.to_string());
  }

  SolverConfig solver_config() const {
    SolverConfig s;
    s.radius = o_.radius;
    s.iterations = o_.iterations;
    s.mode = o_.step == "adaptive" ? StepMode::adaptive : StepMode::fixed;
    s.alpha = o_.alpha;
    s.bound_b = o_.bound_b;
    return s;
  }

  void solve() {
    const FeatureTable table = load_table();
    const Policy pi0 = load_reference(table);
    const auto th = load_thetas(o_.thetas, table.dim());
    const ProblemSpec spec = problem_spec(th.size() - 1);
    const DualProblem problem = make_problem(spec, pi0, table, th);
    const SolverTrace trace = solve_dual(problem, solver_config());
    emit("trace.csv", trace.to_csv());
    emit("policy.csv", io::policy_csv(trace.policy));
    io::KeyValues kv;
    for (std::size_t k = 0; k < trace.lambda_bar.size(); ++k) {
      kv.set("lambda_bar_" + std::to_string(k + 1), trace.lambda_bar[k]);
    }
    kv.set("bound_b", trace.bound_b);
    kv.set("radius", o_.radius);
    kv.set("iterations", std::to_string(o_.iterations));
    kv.set("step", o_.step);
    kv.set("estimated_objective", problem.objective(trace.policy));
    for (std::size_t k = 0; k < spec.num_constraints(); ++k) {
      kv.set("estimated_constraint_" + std::to_string(k + 1), problem.constraint_reward(trace.policy, k));
    }
    emit("solution.txt", kv.to_string());
  }

  void certify_cmd() {
    const auto ext = load_data();
    const auto th = load_thetas(o_.thetas, ext.table.dim());
    require(th.size() == ext.data.num_oracles(), ErrorKind::validation,
            "parameter file and preference file disagree on the number of oracles");
    const ProblemSpec spec = problem_spec(th.size() - 1);
    const DifferenceMatrix deltas = build_differences(ext.data, ext.table);
    const CovarianceBundle cov = covariance_bundle(deltas, o_.lambda_reg);
    CertificateConfig cc;
    cc.delta = o_.delta;
    cc.c = o_.c;
    cc.ck2 = o_.ck2;
    cc.lambda_reg = o_.lambda_reg;
    cc.bound_b = o_.bound_b;
    cc.mode = o_.envelopes == "data_independent" ? EnvelopeMode::data_independent
                                                 : EnvelopeMode::data_dependent;
    cc.iterations = o_.iterations;
    if (explicit_radius_) cc.radius = o_.radius;
    const auto pop = eigen_range(population_difference_covariance(ext.table, ext.pi0));
    CertificateInputs in{&ext.table, &ext.pi0, spec, th, &cov, ext.data.size(), pop};
    emit("certificate.txt", certify(in, cc, o_.radius).to_key_value());
  }

  void evaluate() {
    const FeatureTable table = load_table();
    const Policy pi0 = load_reference(table);
    const auto truth_th = load_thetas(o_.truth, table.dim());
    const ProblemSpec spec = problem_spec(truth_th.size() - 1);
    const DualProblem truth = make_problem(spec, pi0, table, truth_th);
    const auto sol = io::read_key_values(input(o_.solution));
    std::vector<double> bar;
    for (std::size_t k = 1; k <= spec.num_constraints(); ++k) {
      bar.push_back(sol.get_double("lambda_bar_" + std::to_string(k)));
    }
    const SolverTrace trace{{}, bar, 0.0,
                            io::parse_policy(io::read_text(input(o_.policy)), o_.policy,
                                             table.num_prompts(), table.num_actions())};
    const double upper = sol.get("radius") ? sol.get_double("radius") : o_.radius;
    const OracleSolution star = spec.num_constraints() == 1 ? oracle_lambda_star(truth)
                                                            : grid_oracle(truth, upper, 1e-3);
    const SolutionMetrics met = evaluate_solution(trace, truth, star.lambda);
    io::KeyValues kv;
    for (std::size_t k = 0; k < star.lambda.size(); ++k) {
      const std::string id = std::to_string(k + 1);
      kv.set("lambda_star_" + id, star.lambda[k]);
      kv.set("lambda_bar_" + id, trace.lambda_bar[k]);
      kv.set("violation_" + id, met.violation[k]);
      kv.set("signed_violation_" + id, met.signed_violation[k]);
      kv.set("deployed_violation_" + id, met.deployed_violation[k]);
    }
    kv.set("dual_gap", met.dual_gap);
    kv.set("primal_gap", met.primal_gap);
    kv.set("deployed_primal_gap", met.deployed_primal_gap);
    kv.set("optimal_objective", truth.objective(star.policy));
    emit("evaluation.txt", kv.to_string());
  }

  void sweep() {
    SweepConfig cfg;
    cfg.base = synthetic();
    cfg.base.n_max = 0;
    for (std::size_t n : o_.sizes) cfg.base.n_max = std::max(cfg.base.n_max, n);
    cfg.w_values = o_.w_values;
    cfg.seeds = o_.seeds;
    cfg.sizes = o_.sizes;
    cfg.eta = o_.eta;
    cfg.iterations = o_.iterations;
    cfg.step = o_.step == "adaptive" ? StepMode::adaptive : StepMode::fixed;
    cfg.lambda_reg = o_.lambda_reg;
    cfg.calibration = calibration_mode();
    cfg.certificates.delta = o_.delta;
    cfg.certificates.c = o_.c;
    cfg.certificates.ck2 = o_.ck2;
    cfg.certificates.bound_b = o_.bound_b;
    cfg.certificates.mode = o_.envelopes == "data_independent" ? EnvelopeMode::data_independent
                                                               : EnvelopeMode::data_dependent;
    if (explicit_radius_) cfg.radius = o_.radius;
    cfg.fallback_radius = o_.radius;
    cfg.threads = o_.threads;
    const SweepReport rep = run_sweep(cfg);
    emit("sweep.csv", rep.to_csv());
    emit("sweep_long.csv", rep.to_long_csv());
    emit("sweep_summary.csv", rep.summary_csv());
  }

  void write_manifest() {
    std::ostringstream os;
    os << "# crlhf run manifest; load with --config to reproduce\n"
       << "#@ version=" << kVersion << '\n'
       << "#@ kernels=" << kernels::active().name << '\n';
    for (const auto& f : outputs_) os << "#@ output=" << f << '\n';
    os << manifest_text_;
    io::write_text(out_ / manifest_name_, os.str());
  }

 public:
  bool explicit_eta_ = false;
  bool explicit_radius_ = false;

 private:
  const Options& o_;
  fs::path out_;
  fs::path in_;
  std::string manifest_text_;
  std::string manifest_name_;
  std::vector<std::string> outputs_;
};

// Effective option values (after presets) in the key=value form --config reads.
std::string manifest_config(const Options& o) {
  std::ostringstream os;
  auto put = [&](const char* key, const auto& v) { os << key << '=' << v << '\n'; };
  auto num = [](double v) { return io::format_double(v); };
  auto list = [](const auto& values, auto fmt) {
    std::string s = "[";
    for (std::size_t i = 0; i < values.size(); ++i) s += (i ? "," : "") + fmt(values[i]);
    return s + "]";
  };
  auto dbl = [&](double v) { return num(v); };
  auto uint = [](auto v) { return std::to_string(v); };
  put("command", o.command);
  put("preset", o.preset);
  put("seed", o.seed);
  put("out", o.out);
  if (!o.in.empty()) put("in", o.in);
  put("features", o.features);
  put("preferences", o.preferences);
  put("reference", o.reference);
  put("thetas", o.thetas);
  put("truth", o.truth);
  put("problem", o.problem);
  put("solution", o.solution);
  put("policy", o.policy);
  put("renormalize", o.renormalize ? "true" : "false");
  put("prompts", o.prompts);
  put("actions", o.actions);
  put("dim", o.dim);
  put("constraints", o.constraints);
  put("w", num(o.w));
  put("eta0", num(o.eta0));
  put("n", o.n);
  put("frac", num(o.frac));
  put("lambda-hi", num(o.lambda_hi));
  put("calibration", o.calibration);
  put("calibration-samples", o.calibration_samples);
  put("eta", num(o.eta));
  if (!o.jmin.empty()) put("jmin", list(o.jmin, dbl));
  put("divergence", o.divergence);
  put("alpha-divergence", num(o.alpha_div));
  put("lambda-reg", num(o.lambda_reg));
  put("delta", num(o.delta));
  put("c", num(o.c));
  put("ck2", num(o.ck2));
  put("bound-b", num(o.bound_b));
  put("envelopes", o.envelopes);
  put("radius", num(o.radius));
  put("iterations", o.iterations);
  put("step", o.step);
  put("alpha", num(o.alpha));
  put("w-values", list(o.w_values, dbl));
  put("seeds", list(o.seeds, uint));
  put("sizes", list(o.sizes, uint));
  put("threads", o.threads);
  return os.str();
}

}  // namespace

int main(int argc, char** argv) {
  Options o;
  CLI::App app{"Offline constrained RLHF with multiple preference oracles"};
  app.set_config("--config", "", "key=value config file (a run manifest works)");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.add_option("command", o.command, "generate | fit | solve | certify | evaluate | sweep")
      ->required()
      ->check(CLI::IsMember({"generate", "fit", "solve", "certify", "evaluate", "sweep"}));
  app.add_option("--preset", o.preset, "appendix_a | pku | none")
      ->check(CLI::IsMember({"none", "appendix_a", "pku"}))
      ->capture_default_str();
  app.add_option("--seed", o.seed)->capture_default_str();
  app.add_option("--out", o.out, "output directory")->capture_default_str();
  app.add_option("--in", o.in, "input directory (defaults to --out)");
  app.add_option("--features", o.features)->capture_default_str();
  app.add_option("--preferences", o.preferences)->capture_default_str();
  app.add_option("--reference", o.reference, "reference policy; uniform when the file is absent")
      ->capture_default_str();
  app.add_option("--thetas", o.thetas, "fitted parameters")->capture_default_str();
  app.add_option("--truth", o.truth, "true parameters for evaluate")->capture_default_str();
  app.add_option("--problem", o.problem, "key=value file with eta and j_min_k")->capture_default_str();
  app.add_option("--solution", o.solution)->capture_default_str();
  app.add_option("--policy", o.policy)->capture_default_str();
  app.add_flag("--renormalize,!--no-renormalize", o.renormalize,
               "rescale feature rows with norm above 1")
      ->capture_default_str();

  app.add_option("--prompts", o.prompts)->capture_default_str();
  app.add_option("--actions", o.actions)->capture_default_str();
  app.add_option("--dim", o.dim)->capture_default_str();
  app.add_option("--constraints", o.constraints)->capture_default_str();
  app.add_option("--w", o.w)->capture_default_str();
  app.add_option("--eta0", o.eta0)->capture_default_str();
  app.add_option("--n", o.n, "dataset size for generate")->capture_default_str();
  app.add_option("--frac", o.frac)->capture_default_str();
  app.add_option("--lambda-hi", o.lambda_hi)->capture_default_str();
  app.add_option("--calibration", o.calibration)
      ->check(CLI::IsMember({"exact", "sampled"}))
      ->capture_default_str();
  app.add_option("--calibration-samples", o.calibration_samples)->capture_default_str();

  auto* eta_opt = app.add_option("--eta", o.eta)->capture_default_str();
  app.add_option("--jmin", o.jmin, "J_min per constraint oracle")->delimiter(',');
  app.add_option("--divergence", o.divergence)
      ->check(CLI::IsMember({"kl", "chi_square", "alpha"}))
      ->capture_default_str();
  app.add_option("--alpha-divergence", o.alpha_div)->capture_default_str();

  app.add_option("--lambda-reg", o.lambda_reg)->capture_default_str();
  app.add_option("--delta", o.delta)->capture_default_str();
  app.add_option("--c", o.c, "constant in beta_N")->capture_default_str();
  app.add_option("--ck2", o.ck2, "constant in the change-of-norm deviation")->capture_default_str();
  app.add_option("--bound-b", o.bound_b, "reward bound B; 0 means automatic")->capture_default_str();
  app.add_option("--envelopes", o.envelopes)
      ->check(CLI::IsMember({"data_dependent", "data_independent"}))
      ->capture_default_str();

  auto* radius_opt = app.add_option("--radius", o.radius, "projection radius R")->capture_default_str();
  auto* iter_opt = app.add_option("--iterations", o.iterations)->capture_default_str();
  auto* step_opt = app.add_option("--step", o.step)
                       ->check(CLI::IsMember({"fixed", "adaptive"}))
                       ->capture_default_str();
  app.add_option("--alpha", o.alpha, "fixed step; 0 means eta / (m B^2)")->capture_default_str();

  app.add_option("--w-values", o.w_values)->delimiter(',');
  app.add_option("--seeds", o.seeds)->delimiter(',');
  app.add_option("--sizes", o.sizes)->delimiter(',');
  app.add_option("--threads", o.threads)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  // Presets fill in whatever the user did not set explicitly.
  if (o.preset == "pku") {
    if (eta_opt->count() == 0) o.eta = 0.3;
    if (radius_opt->count() == 0) o.radius = 100.0;
    if (iter_opt->count() == 0) o.iterations = 1000;
    if (step_opt->count() == 0) o.step = "adaptive";
  } else if (o.preset == "appendix_a") {
    if (eta_opt->count() == 0) o.eta = 0.05;
    if (iter_opt->count() == 0) o.iterations = 1000;
    if (step_opt->count() == 0) o.step = "fixed";
  }

  try {
    Run run(o, manifest_config(o));
    run.explicit_eta_ = eta_opt->count() > 0 || o.preset != "none";
    run.explicit_radius_ = radius_opt->count() > 0;
    run.execute();
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.kind()) << "]: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error [internal]: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
