#include "cli.hpp"

#include <CLI11.hpp>

#include <exception>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>

namespace hmcecs::cli {

namespace fs = std::filesystem;

std::vector<double> parse_vector(const std::string& text, const std::string& what) {
  std::vector<double> out;
  if (trim(text).empty()) return out;
  for (auto field : split_csv_line(text)) {
    try {
      out.push_back(parse_double(field, what));
    } catch (const IoError& e) {
      throw ConfigError(e.what());
    }
  }
  return out;
}

std::string format_vector(const Vector& v) {
  std::string s;
  for (Index j = 0; j < v.size(); ++j) s += (j ? "," : "") + format_double(v[j]);
  return s;
}

namespace {

Vector to_eigen(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size()));
}

std::string strip_quotes(std::string_view v) {
  if (v.size() >= 2 && ((v.front() == '"' && v.back() == '"') || (v.front() == '\'' && v.back() == '\''))) {
    v = v.substr(1, v.size() - 2);
  }
  return std::string(v);
}

void refuse_overwrite(const fs::path& path, bool force) {
  if (fs::exists(path) && !force) {
    throw IoError(path.string() + " already exists (use --force to overwrite)");
  }
}

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

void ensure_directory(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string());
}

// Seeded default coefficients for synthetic data: N(0, 0.5^2) per coordinate.
Vector default_theta_true(Index d, std::uint64_t seed) {
  Rng rng = make_rng(seed, 7);
  std::normal_distribution<double> normal(0.0, 0.5);
  Vector t(d);
  for (Index j = 0; j < d; ++j) t[j] = normal(rng);
  return t;
}

void add_sample_options(CLI::App& app, RunConfig& c) {
  app.add_option("--mode", c.mode, "hmc | hmc-ecs | hmc-ecs-poisson");
  app.add_option("--model", c.model, "logistic | gaussian");
  app.add_option("--noise-precision", c.noise_precision, "noise precision of the gaussian model");
  app.add_option("--data", c.data, "CSV data file (header row, column 'y')");
  app.add_option("--n", c.n, "synthetic data: observations");
  app.add_option("--d", c.d, "synthetic data: parameters (incl. intercept)");
  app.add_option("--data-seed", c.data_seed, "synthetic data: seed");
  app.add_option("--theta-true", c.theta_true, "synthetic data: coefficients, comma-separated");
  app.add_option("--m", c.m, "subsample size");
  app.add_option("--G", c.G, "number of blocks of the subsample");
  app.add_option("--n-train", c.n_train, "training (adaptation) iterations");
  app.add_option("--n-iter", c.n_iter, "sampling iterations");
  app.add_option("--seed", c.seed, "sampler seed");
  app.add_option("--trajectory-length", c.trajectory_length, "epsilon * L");
  app.add_option("--step-size", c.step_size, "initial/fixed step size (0: automatic)");
  app.add_option("--delta", c.delta, "target acceptance rate");
  app.add_option("--lambda", c.lambda, "prior shrinkage (precision lambda^2)");
  app.add_option("--theta0", c.theta0, "starting point, comma-separated (default: 0)");
  app.add_option("--center", c.center, "control-variate center, comma-separated");
  app.add_option("--initial-center", c.initial_center, "mode | theta0");
  app.add_option("--block-selection", c.block_selection, "random | cyclic");
  app.add_option("--proxy-order", c.proxy_order, "second | first");
  app.add_option("--u-updates", c.u_updates, "block updates of u per iteration");
  app.add_option("--refresh-period", c.refresh_period, "center refresh period during training");
  app.add_option("--window-fraction", c.window_fraction, "fraction of recent iterates averaged for the center");
  app.add_option("--adapt-center", c.adapt_center, "refresh the center and mass during training");
  app.add_option("--jitter", c.jitter, "jitter L by +-10%");
  app.add_option("--max-steps", c.max_steps, "cap on leapfrog steps");
  app.add_option("--divergence-threshold", c.divergence_threshold, "|dH| treated as divergence");
  app.add_option("--mu", c.mu, "Poisson mean (initial value when adapted)");
  app.add_option("--adapt-mu", c.adapt_mu, "re-estimate mu at center refreshes");
  app.add_option("--mb", c.mb, "Poisson inner subsample size (0: m)");
  app.add_option("--poisson-blocks", c.poisson_blocks, "blocks per Poisson subsample");
  app.add_option("--c", c.c, "lower bound a = l_pilot - c * sd_pilot");
  app.add_option("--rho", c.rho, "correlation of successive Poisson draws");
  app.add_option("--lower-bound", c.lower_bound, "pilot | fixed");
  app.add_option("--a", c.a, "fixed lower bound");
  app.add_option("--pilot", c.pilot, "choose the trajectory length by pilot runs");
  app.add_option("--pilot-grid", c.pilot_grid, "trajectory lengths tried by the pilot");
  app.add_option("--pilot-step-size", c.pilot_step_size, "step size of the pilot runs");
  app.add_option("--pilot-iterations", c.pilot_iterations, "iterations per pilot run");
  app.add_option("--out", c.out, "output directory");
  app.add_option("--thin", c.thin, "keep every thin-th iteration");
  app.add_option("--chains", c.chains, "independent chains (run concurrently)");
  app.add_option("--force", c.force, "overwrite existing outputs");
}

RunConfig load_run_config(const fs::path& path) {
  RunConfig c;
  CLI::App app;
  app.allow_extras(false);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  add_sample_options(app, c);
  std::vector<std::string> args = config_file_arguments(path);
  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    throw ConfigError("invalid run configuration " + path.string() + ": " + e.what());
  }
  return c;
}

template <typename F>
decltype(auto) with_model(const RunConfig& config, const Dataset& data, F&& f) {
  if (config.model == "gaussian") return f(GaussianModel(data, config.noise_precision));
  return f(LogisticModel(data));
}

class DrawsWriter {
 public:
  DrawsWriter(const fs::path& dir, Index d)
      : draws_(open_output(dir / "draws.csv")), timing_(open_output(dir / "timing.csv")) {
    draws_ << "iteration,training";
    for (Index j = 1; j <= d; ++j) draws_ << ",theta_" << j;
    draws_ << ",sign,accept_u,accept_theta,alpha_u,alpha_theta,ell_hat,sigma2_hat,G,evaluations,step_size,steps,"
              "energy_change,diverged\n";
    timing_ << "iteration,wall_seconds\n";
  }

  void operator()(const TraceRow& r) {
    draws_ << r.iteration << ',' << (r.training ? 1 : 0);
    for (Index j = 0; j < r.theta.size(); ++j) draws_ << ',' << format_double(r.theta[j]);
    draws_ << ',' << r.sign << ',' << (r.accepted_u ? 1 : 0) << ',' << (r.accepted_theta ? 1 : 0) << ','
           << format_double(r.alpha_u) << ',' << format_double(r.alpha_theta) << ',' << format_double(r.ell_hat)
           << ',' << format_double(r.sigma2_hat) << ',' << r.poisson_draws << ',' << r.evaluations << ','
           << format_double(r.step_size) << ',' << r.steps << ',' << format_double(r.energy_change) << ','
           << (r.diverged ? 1 : 0) << '\n';
    timing_ << r.iteration << ',' << format_double(r.wall_seconds) << '\n';
    if (++rows_ % 64 == 0) {
      draws_.flush();
      timing_.flush();
    }
    if (!draws_) throw IoError("write failed for draws.csv");
  }

  void close() {
    draws_.flush();
    timing_.flush();
    if (!draws_ || !timing_) throw IoError("write failed for draws.csv");
  }

 private:
  std::ofstream draws_;
  std::ofstream timing_;
  std::uint64_t rows_ = 0;
};

void write_parameters(const fs::path& path, const ChainTrace& trace, const EfficiencyReport& report) {
  std::ofstream out = open_output(path);
  out << "parameter,mean,sd,IF,ESS,CT\n";
  const std::vector<double> ct = computational_time(report);
  for (Index j = 0; j < trace.dim(); ++j) {
    const CoordinateMoments mom = coordinate_moments(trace, j);
    const auto k = static_cast<std::size_t>(j);
    out << "theta_" << (j + 1) << ',' << format_double(mom.mean) << ',' << format_double(mom.sd) << ','
        << format_double(report.inefficiency[k]) << ',' << format_double(report.effective_sample_size[k]) << ','
        << format_double(ct[k]) << '\n';
  }
}

void write_adaptation(const fs::path& dir, const ChainTrace& trace) {
  std::ofstream out = open_output(dir / "adaptation.csv");
  out << "iteration,step_size,averaged_step_size,steps,acceptance\n";
  for (const auto& a : trace.adaptation) {
    out << a.iteration << ',' << format_double(a.step_size) << ',' << format_double(a.averaged_step_size) << ','
        << a.steps << ',' << format_double(a.acceptance) << '\n';
  }
  std::ofstream ref = open_output(dir / "refreshes.csv");
  ref << "iteration,step_size,mu";
  for (Index j = 1; j <= trace.dim(); ++j) ref << ",center_" << j;
  ref << '\n';
  for (const auto& r : trace.refreshes) {
    ref << r.iteration << ',' << format_double(r.step_size) << ',' << format_double(r.poisson_mean);
    for (Index j = 0; j < r.center.size(); ++j) ref << ',' << format_double(r.center[j]);
    ref << '\n';
  }
}

struct RunLocation {
  fs::path draws;
  SamplerKind kind = SamplerKind::hmc;
  std::optional<double> trajectory_length;
};

RunLocation locate_run(const std::string& where) {
  fs::path p(where);
  RunLocation loc;
  fs::path dir = p;
  if (fs::is_directory(p)) {
    loc.draws = p / "draws.csv";
  } else {
    loc.draws = p;
    dir = p.parent_path();
  }
  if (!fs::exists(loc.draws)) throw IoError("no draws file at " + loc.draws.string());
  const fs::path cfg = dir / "run_config.txt";
  if (fs::exists(cfg)) {
    const auto kv = read_key_values(cfg);
    if (auto it = kv.find("mode"); it != kv.end()) loc.kind = parse_sampler_kind(it->second);
    if (auto it = kv.find("trajectory-length"); it != kv.end()) {
      loc.trajectory_length = parse_double(it->second, cfg.string());
    }
  }
  return loc;
}

std::vector<double> sign_weighted_kde(const ChainTrace& trace, Index j, std::span<const double> grid) {
  const std::vector<double> x = trace.sampling_coordinate(j);
  const std::span<const int> s(trace.signs().data() + trace.sampling_begin(), x.size());
  return kde_density(x, grid, s);
}

}  // namespace

std::vector<std::string> config_file_arguments(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  std::vector<std::string> args;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const std::string_view t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(path.string() + ":" + std::to_string(number) + ": expected 'key = value'");
    }
    std::string key(trim(t.substr(0, eq)));
    for (char& ch : key) {
      if (ch == '_') ch = '-';
    }
    const std::string value = strip_quotes(trim(t.substr(eq + 1)));
    if (value.empty()) continue;  // empty means "use the default"
    args.push_back("--" + key + "=" + value);
  }
  return args;
}

std::map<std::string, std::string> read_key_values(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    const std::string_view t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string_view::npos) continue;
    kv[std::string(trim(t.substr(0, eq)))] = strip_quotes(trim(t.substr(eq + 1)));
  }
  return kv;
}

void validate(const RunConfig& c) {
  parse_sampler_kind(c.mode);
  if (c.model != "logistic" && c.model != "gaussian") throw ConfigError("model must be logistic or gaussian");
  if (c.out.empty()) throw ConfigError("--out is required");
  if (!c.data.empty() && !fs::exists(c.data)) throw ConfigError("data file " + c.data + " does not exist");
  if (c.data.empty() && (c.n < 1 || c.d < 1)) throw ConfigError("synthetic data needs n, d >= 1");
  if (c.data.empty() && c.mode != "hmc" && c.m > c.n) throw ConfigError("m must not exceed n");
  if (c.chains < 1) throw ConfigError("chains must be >= 1");
  if (!(c.lambda > 0.0)) throw ConfigError("lambda must be > 0");
  if (c.step_size < 0.0) throw ConfigError("step size must be >= 0 (0: automatic)");
  if (c.initial_center != "mode" && c.initial_center != "theta0") {
    throw ConfigError("initial-center must be mode or theta0");
  }
  if (c.block_selection != "random" && c.block_selection != "cyclic") {
    throw ConfigError("block-selection must be random or cyclic");
  }
  if (c.proxy_order != "second" && c.proxy_order != "first") throw ConfigError("proxy-order must be second or first");
  if (c.lower_bound != "pilot" && c.lower_bound != "fixed") throw ConfigError("lower-bound must be pilot or fixed");
  if (c.model == "gaussian" && !(c.noise_precision > 0.0)) throw ConfigError("noise precision must be > 0");
}

SamplerConfig to_sampler_config(const RunConfig& c, Index d) {
  SamplerConfig s;
  s.seed = c.seed;
  s.n_train = c.n_train;
  s.n_iter = c.n_iter;
  s.subsample_size = c.m;
  s.blocks = c.G;
  s.u_updates = c.u_updates;
  s.block_selection = c.block_selection == "cyclic" ? BlockSelection::cyclic : BlockSelection::random;
  s.proxy_order = c.proxy_order == "first" ? ProxyOrder::first : ProxyOrder::second;
  s.trajectory_length = c.trajectory_length;
  if (c.step_size > 0.0) s.step_size = c.step_size;
  const std::vector<double> theta0 = parse_vector(c.theta0, "theta0");
  if (!theta0.empty()) s.theta0 = to_eigen(theta0);
  const std::vector<double> center = parse_vector(c.center, "center");
  if (!center.empty()) s.center = to_eigen(center);
  s.initial_center = c.initial_center == "theta0" ? InitialCenter::theta0 : InitialCenter::mode;
  s.refresh_period = c.refresh_period;
  s.window_fraction = c.window_fraction;
  s.adapt_center = c.adapt_center;
  s.dual_averaging.target_acceptance = c.delta;
  s.jitter_steps = c.jitter;
  s.max_steps = c.max_steps;
  s.divergence_threshold = c.divergence_threshold;
  s.thin = c.thin;
  s.poisson.mu = c.mu;
  s.poisson.subsample_size = c.mb;
  s.poisson.blocks = c.poisson_blocks;
  s.poisson.rho = c.rho;
  s.poisson.rule.kind = c.lower_bound == "fixed" ? LowerBoundRule::Kind::fixed : LowerBoundRule::Kind::pilot;
  s.poisson.rule.c = c.c;
  s.poisson.rule.value = c.a;
  s.adapt_poisson_mean = c.adapt_mu;
  if (s.theta0 && s.theta0->size() != d) throw ConfigError("theta0 has the wrong dimension");
  if (s.center && s.center->size() != d) throw ConfigError("center has the wrong dimension");
  return s;
}

void write_run_config(const fs::path& path, const RunConfig& c) {
  std::ofstream out = open_output(path);
  auto b = [](bool v) { return v ? "true" : "false"; };
  auto q = [](const std::string& v) { return "\"" + v + "\""; };
  out << "# resolved run configuration; reusable with --config\n";
  out << "mode = " << c.mode << "\nmodel = " << c.model << "\nnoise-precision = " << format_double(c.noise_precision)
      << "\ndata = " << q(c.data) << "\nn = " << c.n << "\nd = " << c.d << "\ndata-seed = " << c.data_seed
      << "\ntheta-true = " << q(c.theta_true) << "\nm = " << c.m << "\nG = " << c.G << "\nn-train = " << c.n_train
      << "\nn-iter = " << c.n_iter << "\nseed = " << c.seed
      << "\ntrajectory-length = " << format_double(c.trajectory_length)
      << "\nstep-size = " << format_double(c.step_size) << "\ndelta = " << format_double(c.delta)
      << "\nlambda = " << format_double(c.lambda) << "\ntheta0 = " << q(c.theta0) << "\ncenter = " << q(c.center)
      << "\ninitial-center = " << c.initial_center << "\nblock-selection = " << c.block_selection
      << "\nproxy-order = " << c.proxy_order << "\nu-updates = " << c.u_updates
      << "\nrefresh-period = " << c.refresh_period << "\nwindow-fraction = " << format_double(c.window_fraction)
      << "\nadapt-center = " << b(c.adapt_center) << "\njitter = " << b(c.jitter) << "\nmax-steps = " << c.max_steps
      << "\ndivergence-threshold = " << format_double(c.divergence_threshold) << "\nmu = " << format_double(c.mu)
      << "\nadapt-mu = " << b(c.adapt_mu) << "\nmb = " << c.mb << "\npoisson-blocks = " << c.poisson_blocks
      << "\nc = " << format_double(c.c) << "\nrho = " << format_double(c.rho) << "\nlower-bound = " << c.lower_bound
      << "\na = " << format_double(c.a) << "\npilot = " << b(c.pilot) << "\npilot-grid = " << q(c.pilot_grid)
      << "\npilot-step-size = " << format_double(c.pilot_step_size)
      << "\npilot-iterations = " << c.pilot_iterations << "\nout = " << q(c.out) << "\nthin = " << c.thin
      << "\nchains = " << c.chains << "\nforce = " << b(c.force) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

LoadedData load_data(const RunConfig& c) {
  LoadedData out;
  if (!c.data.empty()) {
    out.data = read_dataset_csv(c.data);
    if (c.model == "logistic") out.data.validate_binary();
    return out;
  }
  const std::vector<double> tt = parse_vector(c.theta_true, "theta-true");
  out.theta_true = tt.empty() ? default_theta_true(c.d, c.data_seed) : to_eigen(tt);
  if (out.theta_true.size() != c.d) throw ConfigError("theta-true must have d entries");
  out.data = c.model == "gaussian" ? generate_synthetic_gaussian(c.n, c.d, out.theta_true, c.noise_precision, c.data_seed)
                                   : generate_synthetic(c.n, c.d, out.theta_true, c.data_seed);
  return out;
}

ChainTrace read_draws_csv(const fs::path& path, SamplerKind kind) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw IoError(path.string() + " is empty");
  const auto header = split_csv_line(line);
  std::map<std::string, std::size_t> col;
  Index d = 0;
  for (std::size_t i = 0; i < header.size(); ++i) {
    const std::string name(trim(header[i]));
    col[name] = i;
    if (name.rfind("theta_", 0) == 0) ++d;
  }
  for (const char* req : {"iteration", "training", "sign", "accept_u", "accept_theta", "alpha_u", "alpha_theta",
                          "ell_hat", "sigma2_hat", "G", "evaluations", "step_size", "steps", "energy_change",
                          "diverged"}) {
    if (!col.count(req)) throw IoError(path.string() + ": missing column " + req);
  }
  if (d < 1) throw IoError(path.string() + ": no theta columns");
  ChainTrace trace(kind, d);
  Index row_no = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ++row_no;
    const auto f = split_csv_line(line);
    if (f.size() != header.size()) throw IoError(path.string() + ": malformed row " + std::to_string(row_no));
    const std::string ctx = path.string() + " row " + std::to_string(row_no);
    auto num = [&](const char* name) { return parse_double(f[col.at(name)], ctx); };
    TraceRow r;
    r.iteration = static_cast<Index>(num("iteration"));
    r.training = num("training") != 0.0;
    r.theta.resize(d);
    for (Index j = 0; j < d; ++j) r.theta[j] = parse_double(f[col.at("theta_" + std::to_string(j + 1))], ctx);
    r.sign = num("sign") < 0.0 ? -1 : 1;
    r.accepted_u = num("accept_u") != 0.0;
    r.accepted_theta = num("accept_theta") != 0.0;
    r.alpha_u = num("alpha_u");
    r.alpha_theta = num("alpha_theta");
    r.ell_hat = num("ell_hat");
    r.sigma2_hat = num("sigma2_hat");
    r.poisson_draws = static_cast<Index>(num("G"));
    r.evaluations = static_cast<std::uint64_t>(num("evaluations"));
    r.step_size = num("step_size");
    r.steps = static_cast<Index>(num("steps"));
    r.energy_change = num("energy_change");
    r.diverged = num("diverged") != 0.0;
    trace.push(r);
    PhaseTotals& t = r.training ? trace.training_totals : trace.sampling_totals;
    ++t.iterations;
    t.evaluations += r.evaluations;
    t.alpha_u_sum += r.alpha_u;
    t.alpha_theta_sum += r.alpha_theta;
    t.accepted_u += r.accepted_u;
    t.accepted_theta += r.accepted_theta;
    t.divergences += r.diverged;
    t.negative_signs += r.sign < 0;
    trace.final_step_size = r.step_size;
    trace.final_steps = r.steps;
    trace.trajectory_length = r.step_size * static_cast<double>(r.steps);
  }
  return trace;
}

namespace {

void print_diagnostics(std::ostream& out, const EfficiencyReport& r, const std::map<std::string, std::string>& extra) {
  const std::vector<double> ct = computational_time(r);
  double ct_mean = 0.0;
  for (double v : ct) ct_mean += v / static_cast<double>(ct.size());
  out << "sampler = " << r.sampler << '\n'
      << "alpha_theta_p = " << format_double(r.alpha_theta) << '\n'
      << "alpha_u = " << format_double(r.alpha_u) << '\n'
      << "epsilon_L = " << format_double(r.trajectory_length) << '\n'
      << "epsilon = " << format_double(r.step_size) << '\n'
      << "L = " << r.steps << '\n'
      << "IF = " << format_double(r.mean_if) << '\n'
      << "ESS = " << format_double(r.mean_ess) << '\n'
      << "IF_min = " << format_double(r.min_if) << '\n'
      << "IF_max = " << format_double(r.max_if) << '\n'
      << "ESS_min = " << format_double(r.min_ess) << '\n'
      << "ESS_max = " << format_double(r.max_ess) << '\n'
      << "draws = " << r.draws << '\n'
      << "evaluations = " << r.evaluations << '\n'
      << "training_evaluations = " << r.training_evaluations << '\n'
      << "CT_mean = " << format_double(ct_mean) << '\n'
      << "negative_sign_fraction = " << format_double(r.negative_sign_fraction) << '\n'
      << "divergences = " << r.divergences << '\n'
      << "wall_seconds = " << format_double(r.wall_seconds) << '\n';
  for (const auto& [k, v] : extra) out << k << " = " << v << '\n';
}

}  // namespace

void write_diagnostics(const fs::path& path, const EfficiencyReport& report,
                       const std::map<std::string, std::string>& extra) {
  std::ofstream out = open_output(path);
  print_diagnostics(out, report, extra);
  if (!out) throw IoError("write failed for " + path.string());
}

void cmd_generate(const GenerateOptions& o, std::ostream& log) {
  if (o.out.empty()) throw ConfigError("--out is required");
  if (o.n < 1 || o.d < 1) throw ConfigError("n and d must be >= 1");
  if (o.model != "logistic" && o.model != "gaussian") throw ConfigError("model must be logistic or gaussian");
  const fs::path out(o.out);
  const fs::path sidecar = out.string() + ".theta_true.csv";
  refuse_overwrite(out, o.force);
  refuse_overwrite(sidecar, o.force);
  const std::vector<double> tt = parse_vector(o.theta_true, "theta-true");
  const Vector theta = tt.empty() ? default_theta_true(o.d, o.seed) : to_eigen(tt);
  if (theta.size() != o.d) throw ConfigError("theta-true must have d entries");
  const Dataset data = o.model == "gaussian" ? generate_synthetic_gaussian(o.n, o.d, theta, o.noise_precision, o.seed)
                                             : generate_synthetic(o.n, o.d, theta, o.seed);
  if (out.has_parent_path()) ensure_directory(out.parent_path());
  write_dataset_csv(out, data);
  std::ofstream side = open_output(sidecar);
  side << "parameter,value\n";
  for (Index j = 0; j < theta.size(); ++j) side << "theta_" << (j + 1) << ',' << format_double(theta[j]) << '\n';
  if (!side) throw IoError("write failed for " + sidecar.string());
  log << "wrote " << out.string() << " (n=" << o.n << ", d=" << o.d << ") and " << sidecar.string() << '\n';
}

SampleResult cmd_sample(RunConfig config, std::ostream& log) {
  validate(config);
  const SamplerKind kind = parse_sampler_kind(config.mode);
  const fs::path out(config.out);
  const LoadedData loaded = load_data(config);
  const Dataset& data = loaded.data;
  config.n = data.size();
  config.d = data.dim();
  if (kind != SamplerKind::hmc && config.m > config.n) throw ConfigError("m must not exceed n");
  const Prior prior(config.lambda);

  std::vector<fs::path> dirs;
  for (Index c = 0; c < config.chains; ++c) {
    dirs.push_back(config.chains == 1 ? out : out / ("chain_" + std::to_string(c + 1)));
  }
  for (const auto& dir : dirs) refuse_overwrite(dir / "draws.csv", config.force);
  refuse_overwrite(out / "run_config.txt", config.force);

  return with_model(config, data, [&](const auto& model) {
    SamplerConfig base = to_sampler_config(config, data.dim());
    base.validate(kind, data.size(), data.dim());
    if (config.pilot) {
      PilotSettings ps;
      ps.grid = parse_vector(config.pilot_grid, "pilot-grid");
      ps.step_size = config.pilot_step_size;
      ps.iterations = config.pilot_iterations;
      const PilotResult pr = pilot_trajectory_length(base, model, prior, ps);
      for (const auto& cand : pr.candidates) {
        log << "pilot epsilon_L=" << cand.trajectory_length << ": "
            << (cand.failed ? "failed (" + cand.failure + ")" : "ESS/eval=" + format_double(cand.ess_per_evaluation))
            << '\n';
      }
      config.trajectory_length = pr.trajectory_length;
      base.trajectory_length = pr.trajectory_length;
      log << "pilot selected epsilon_L = " << pr.trajectory_length << '\n';
    }
    ensure_directory(out);
    write_run_config(out / "run_config.txt", config);

    const auto chains = static_cast<std::size_t>(config.chains);
    std::vector<ChainTrace> traces(chains);
    std::vector<std::exception_ptr> errors(chains);
    auto run_one = [&](std::size_t c) {
      try {
        ensure_directory(dirs[c]);
        DrawsWriter writer(dirs[c], data.dim());
        SamplerConfig sc = base;
        sc.chain = c;
        sc.store_draws = true;
        sc.sink = [&writer](const TraceRow& r) { writer(r); };
        try {
          traces[c] = run_sampler(kind, sc, model, prior);
        } catch (const DivergenceError& e) {
          writer.close();
          std::ofstream dump(dirs[c] / "error.txt");
          dump << "error = divergence\nmessage = " << e.what() << '\n';
          throw;
        }
        writer.close();
      } catch (...) {
        errors[c] = std::current_exception();
      }
    };
    if (chains == 1) {
      run_one(0);
    } else {
      std::vector<std::thread> pool;
      for (std::size_t c = 0; c < chains; ++c) pool.emplace_back(run_one, c);
      for (auto& t : pool) t.join();
    }
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }

    SampleResult result;
    for (std::size_t c = 0; c < chains; ++c) {
      const ChainTrace& trace = traces[c];
      const EfficiencyReport report = summarize(trace);
      std::map<std::string, std::string> extra{
          {"n", std::to_string(data.size())},
          {"d", std::to_string(data.dim())},
          {"seed", std::to_string(config.seed)},
          {"chain", std::to_string(c + 1)},
          {"iterations_train", std::to_string(trace.training_totals.iterations)},
          {"iterations_sample", std::to_string(trace.sampling_totals.iterations)},
          {"subsample_size", std::to_string(trace.subsample_size)},
          {"refreshes", std::to_string(trace.refreshes.size())},
      };
      if (kind == SamplerKind::hmc_ecs) extra["G"] = std::to_string(config.G);
      if (kind == SamplerKind::hmc_ecs_poisson) {
        extra["mu"] = format_double(trace.poisson_mean);
        extra["degenerate_proposals"] = std::to_string(trace.sampling_totals.degenerate_proposals);
      }
      write_diagnostics(dirs[c] / "diagnostics.txt", report, extra);
      write_parameters(dirs[c] / "parameters.csv", trace, report);
      write_adaptation(dirs[c], trace);
      if (trace.cache) save_cache(dirs[c] / "cache.bin", *trace.cache);
      log << dirs[c].string() << ": " << report.sampler << " alpha_theta_p=" << report.alpha_theta
          << " alpha_u=" << report.alpha_u << " epsilon=" << report.step_size << " L=" << report.steps
          << " IF=" << report.mean_if << " ESS=" << report.mean_ess << '\n';
      result.run_dirs.push_back(dirs[c]);
      result.reports.push_back(report);
    }
    return result;
  });
}

TraceComparison cmd_compare(const CompareOptions& o, std::ostream& log) {
  if (o.out.empty()) throw ConfigError("--out is required");
  const RunLocation la = locate_run(o.a);
  const RunLocation lb = locate_run(o.b);
  const ChainTrace a = read_draws_csv(la.draws, la.kind);
  const ChainTrace b = read_draws_csv(lb.draws, lb.kind);
  if (a.dim() != b.dim()) {
    throw ConfigError("compare: traces have different dimensions (" + std::to_string(a.dim()) + " vs " +
                      std::to_string(b.dim()) + ")");
  }
  const fs::path out(o.out);
  for (const char* name : {"comparison.csv", "kde.csv", "comparison.txt"}) refuse_overwrite(out / name, o.force);
  const TraceComparison cmp = compare_traces(a, b);
  ensure_directory(out);

  std::ofstream csv = open_output(out / "comparison.csv");
  csv << "parameter,mean_a,mean_b,sd_a,sd_b,mean_delta_sd,sd_ratio,rct\n";
  for (std::size_t j = 0; j < cmp.mean_a.size(); ++j) {
    csv << "theta_" << (j + 1) << ',' << format_double(cmp.mean_a[j]) << ',' << format_double(cmp.mean_b[j]) << ','
        << format_double(cmp.sd_a[j]) << ',' << format_double(cmp.sd_b[j]) << ','
        << format_double(cmp.mean_delta[j]) << ',' << format_double(cmp.sd_ratio[j]) << ','
        << format_double(cmp.rct[j]) << '\n';
  }

  std::ofstream kde = open_output(out / "kde.csv");
  kde << "parameter,x,density_a,density_b\n";
  for (Index j = 0; j < a.dim(); ++j) {
    const std::vector<double> xa = a.sampling_coordinate(j);
    const std::vector<double> xb = b.sampling_coordinate(j);
    const std::array<std::span<const double>, 2> both{std::span<const double>(xa), std::span<const double>(xb)};
    const std::vector<double> grid = shared_kde_grid(both, o.grid_points);
    const std::vector<double> da = sign_weighted_kde(a, j, grid);
    const std::vector<double> db = sign_weighted_kde(b, j, grid);
    for (std::size_t g = 0; g < grid.size(); ++g) {
      kde << "theta_" << (j + 1) << ',' << format_double(grid[g]) << ',' << format_double(da[g]) << ','
          << format_double(db[g]) << '\n';
    }
  }

  double rct_mean = 0.0;
  for (double v : cmp.rct) rct_mean += v / static_cast<double>(cmp.rct.size());
  std::ofstream txt = open_output(out / "comparison.txt");
  txt << "trace_a = " << la.draws.string() << "\ntrace_b = " << lb.draws.string() << "\nsampler_a = "
      << to_string(la.kind) << "\nsampler_b = " << to_string(lb.kind) << "\nd = " << a.dim()
      << "\nmax_abs_mean_delta_sd = " << format_double(cmp.max_abs_mean_delta)
      << "\nrct_mean = " << format_double(rct_mean)
      << "\nrct_min = " << format_double(*std::min_element(cmp.rct.begin(), cmp.rct.end()))
      << "\nrct_max = " << format_double(*std::max_element(cmp.rct.begin(), cmp.rct.end())) << '\n';
  if (!csv || !kde || !txt) throw IoError("write failed in " + out.string());
  log << "max |mean delta| = " << cmp.max_abs_mean_delta << " posterior sd; mean RCT = " << rct_mean << '\n';
  return cmp;
}

EfficiencyReport cmd_diagnose(const DiagnoseOptions& o, std::ostream& log) {
  if (o.run.empty()) throw ConfigError("--run is required");
  const RunLocation loc = locate_run(o.run);
  ChainTrace trace = read_draws_csv(loc.draws, loc.kind);
  if (loc.trajectory_length) trace.trajectory_length = *loc.trajectory_length;
  const EfficiencyReport report = summarize(trace);
  std::map<std::string, std::string> extra;
  if (o.perturbation_m > 0) {
    const fs::path dir = loc.draws.parent_path();
    const RunConfig cfg = load_run_config(dir / "run_config.txt");
    const LoadedData loaded = load_data(cfg);
    const ControlVariateCache cache = load_cache(dir / "cache.bin");
    Vector mean(trace.dim());
    for (Index j = 0; j < trace.dim(); ++j) mean[j] = coordinate_moments(trace, j).mean;
    Rng rng = make_rng(o.seed, 0);
    const PerturbationEstimate pe = with_model(cfg, loaded.data, [&](const auto& model) {
      return perturbation_error(cache, model, mean, o.perturbation_m, o.replications, rng);
    });
    extra["perturbation_m"] = std::to_string(o.perturbation_m);
    extra["perturbation_error"] = format_double(pe.estimate);
    extra["perturbation_std_error"] = format_double(pe.std_error);
  }
  if (!o.out.empty()) {
    refuse_overwrite(o.out, o.force);
    write_diagnostics(o.out, report, extra);
  }
  print_diagnostics(log, report, extra);
  return report;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const DomainError*>(&e)) return kConfigError;
  if (dynamic_cast<const DivergenceError*>(&e) || dynamic_cast<const ConsistencyError*>(&e)) return kDivergence;
  if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const fs::filesystem_error*>(&e)) return kIoError;
  return 1;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Hamiltonian Monte Carlo with energy-conserving subsampling"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);
  std::string config_path;

  GenerateOptions gen;
  auto* g = app.add_subcommand("generate", "write a synthetic data set");
  g->add_option("--n", gen.n, "observations");
  g->add_option("--d", gen.d, "parameters including the intercept");
  g->add_option("--seed", gen.seed, "seed");
  g->add_option("--theta-true", gen.theta_true, "coefficients, comma-separated (default: drawn from the seed)");
  g->add_option("--model", gen.model, "logistic | gaussian");
  g->add_option("--noise-precision", gen.noise_precision, "gaussian model noise precision");
  g->add_option("--out", gen.out, "output CSV path")->required();
  g->add_flag("--force", gen.force, "overwrite existing files");
  g->add_option("--config", config_path, "key = value file; command-line flags win");

  RunConfig run_cfg;
  auto* s = app.add_subcommand("sample", "run a sampler");
  add_sample_options(*s, run_cfg);
  s->add_option("--config", config_path, "key = value file; command-line flags win");

  CompareOptions cmp;
  auto* c = app.add_subcommand("compare", "compare two runs");
  c->add_option("--a", cmp.a, "reference run directory or draws.csv")->required();
  c->add_option("--b", cmp.b, "candidate run directory or draws.csv")->required();
  c->add_option("--out", cmp.out, "output directory")->required();
  c->add_option("--grid-points", cmp.grid_points, "kernel-density grid size");
  c->add_flag("--force", cmp.force, "overwrite existing files");
  c->add_option("--config", config_path, "key = value file; command-line flags win");

  DiagnoseOptions diag;
  auto* d = app.add_subcommand("diagnose", "efficiency diagnostics of a run");
  d->add_option("--run", diag.run, "run directory or draws.csv")->required();
  d->add_option("--out", diag.out, "write the report to this file");
  d->add_option("--perturbation-m", diag.perturbation_m, "also estimate the perturbation error for this m");
  d->add_option("--replications", diag.replications, "replications for the perturbation estimate");
  d->add_option("--seed", diag.seed, "seed for the perturbation estimate");
  d->add_flag("--force", diag.force, "overwrite existing files");
  d->add_option("--config", config_path, "key = value file; command-line flags win");

  // Splice config-file arguments in right after the subcommand so that later
  // command-line flags override them.
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  try {
    for (std::size_t i = 0; i < args.size(); ++i) {
      std::string path;
      if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
      if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
      if (!path.empty() && !args.empty()) {
        std::vector<std::string> file_args = config_file_arguments(path);
        args.insert(args.begin() + 1, file_args.begin(), file_args.end());
        break;
      }
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*g) {
      cmd_generate(gen, out);
    } else if (*s) {
      cmd_sample(run_cfg, out);
    } else if (*c) {
      cmd_compare(cmp, out);
    } else if (*d) {
      cmd_diagnose(diag, out);
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return kOk;
}

}  // namespace hmcecs::cli
