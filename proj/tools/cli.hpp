#ifndef HMCECS_TOOLS_CLI_HPP
#define HMCECS_TOOLS_CLI_HPP

#include <hmcecs/hmcecs.hpp>

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace hmcecs::cli {

enum ExitCode : int { kOk = 0, kConfigError = 2, kDivergence = 3, kIoError = 4 };

struct GenerateOptions {
  Index n = 1000;
  Index d = 5;
  std::uint64_t seed = 1;
  std::string theta_true;  // comma-separated; empty: drawn from the seed
  std::string model = "logistic";
  double noise_precision = 1.0;
  std::string out;
  bool force = false;
};

/// Everything a `sample` run needs; written back out (with resolved
/// defaults) as run_config.txt, which is itself a valid --config file.
struct RunConfig {
  std::string mode = "hmc-ecs";
  std::string model = "logistic";
  double noise_precision = 1.0;
  // Data source: a CSV path, or a synthetic spec when empty.
  std::string data;
  Index n = 10000;
  Index d = 5;
  std::uint64_t data_seed = 1;
  std::string theta_true;
  // Sampler.
  Index m = 1000;
  Index G = 100;
  Index n_train = 1000;
  Index n_iter = 1000;
  std::uint64_t seed = 1;
  double trajectory_length = 2.0;
  double step_size = 0.0;  // 0: automatic
  double delta = 0.8;
  double lambda = 0.1;
  std::string theta0;
  std::string center;
  std::string initial_center = "mode";
  std::string block_selection = "random";
  std::string proxy_order = "second";
  Index u_updates = 1;
  Index refresh_period = 100;
  double window_fraction = 0.1;
  bool adapt_center = true;
  bool jitter = false;
  Index max_steps = 1024;
  double divergence_threshold = 1000.0;
  // Signed (Poisson) variant.
  double mu = 1.0;
  bool adapt_mu = true;
  Index mb = 0;  // 0: same as m
  Index poisson_blocks = 10;
  double c = 3.0;
  double rho = 0.99;
  std::string lower_bound = "pilot";  // pilot | fixed
  double a = 0.0;                     // used when lower_bound = fixed
  // Pilot search for the trajectory length.
  bool pilot = false;
  std::string pilot_grid = "0.5,1,1.5,2,2.5,3";
  double pilot_step_size = 0.1;
  Index pilot_iterations = 500;
  // Output.
  std::string out;
  Index thin = 1;
  Index chains = 1;
  bool force = false;
};

struct CompareOptions {
  std::string a;
  std::string b;
  std::string out;
  Index grid_points = 512;
  bool force = false;
};

struct DiagnoseOptions {
  std::string run;
  std::string out;  // empty: print only
  Index perturbation_m = 0;
  Index replications = 1000;
  std::uint64_t seed = 1;
  bool force = false;
};

std::vector<double> parse_vector(const std::string& text, const std::string& what);
std::string format_vector(const Vector& v);

/// Flat "key = value" file (# comments) as "--key=value" arguments.
std::vector<std::string> config_file_arguments(const std::filesystem::path& path);
std::map<std::string, std::string> read_key_values(const std::filesystem::path& path);

void validate(const RunConfig& config);
SamplerConfig to_sampler_config(const RunConfig& config, Index d);
void write_run_config(const std::filesystem::path& path, const RunConfig& config);

/// Loaded data plus the theta_true used to simulate it (empty for CSV input).
struct LoadedData {
  Dataset data;
  Vector theta_true;
};
LoadedData load_data(const RunConfig& config);

/// draws.csv contents as a trace (rows and sampling-phase totals).
ChainTrace read_draws_csv(const std::filesystem::path& path, SamplerKind kind);

void write_diagnostics(const std::filesystem::path& path, const EfficiencyReport& report,
                       const std::map<std::string, std::string>& extra);

struct SampleResult {
  std::vector<std::filesystem::path> run_dirs;
  std::vector<EfficiencyReport> reports;
};

void cmd_generate(const GenerateOptions& options, std::ostream& log);
SampleResult cmd_sample(RunConfig config, std::ostream& log);
TraceComparison cmd_compare(const CompareOptions& options, std::ostream& log);
EfficiencyReport cmd_diagnose(const DiagnoseOptions& options, std::ostream& log);

/// Exit code for an exception escaping a command.
int exit_code_for(const std::exception& e);

/// Entry point used by main(): parses arguments and dispatches.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace hmcecs::cli

#endif  // HMCECS_TOOLS_CLI_HPP
