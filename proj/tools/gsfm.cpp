// gsfm: command-line front end for fitting, Kaplan-Meier curves and
// simulation studies.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gsfm/gsfm.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Flags {
  std::string data;
  std::string out = "out";
  std::string config;
  std::optional<int> chains, warmup, draws, trunc, reps, max_depth;
  std::optional<std::uint64_t> seed;
  std::optional<double> mass, target_accept;
  bool pooled = false;
  std::string scenario = "paper43";
  std::string by = "stratum,recurrence";
  bool carry_forward = false;
  unsigned threads = 0;
};

gsfm::RunSettings settings_from(const Flags& f) {
  gsfm::RunSettings s;
  if (!f.config.empty()) {
    std::ifstream in(f.config);
    if (!in) throw gsfm::Error("cannot open config file '" + f.config + "'");
    s = gsfm::read_settings(in);
  }
  if (f.chains) s.nuts.chains = *f.chains;
  if (f.warmup) s.nuts.warmup = *f.warmup;
  if (f.draws) s.nuts.draws = *f.draws;
  if (f.seed) s.nuts.seed = *f.seed;
  if (f.trunc) s.hyper.L = *f.trunc;
  if (f.mass) s.hyper.M = *f.mass;
  if (f.target_accept) s.nuts.target_accept = *f.target_accept;
  if (f.max_depth) s.nuts.max_tree_depth = *f.max_depth;
  if (f.reps) s.replications = *f.reps;
  gsfm::check_hyperparams(s.hyper);
  gsfm::check_config(s.nuts);
  return s;
}

gsfm::Dataset read_dataset(const std::string& path) {
  if (path.empty()) throw gsfm::Error("--data is required");
  std::ifstream in(path);
  if (!in) throw gsfm::Error("cannot open data file '" + path + "'");
  return gsfm::load_csv(in);
}

class Output {
 public:
  explicit Output(const std::string& dir) : dir_(dir) { fs::create_directories(dir_); }

  std::ofstream open(const std::string& name) {
    std::ofstream os(dir_ / name);
    if (!os) throw gsfm::Error("cannot write '" + (dir_ / name).string() + "'");
    files_.push_back(name);
    return os;
  }
  const std::vector<std::string>& files() const { return files_; }
  const fs::path& dir() const { return dir_; }

 private:
  fs::path dir_;
  std::vector<std::string> files_;
};

void write_manifest(Output& out, const std::string& command, const std::vector<std::string>& args,
                    const gsfm::RunSettings& s, double wall_time, json extra = json::object()) {
  json m;
  m["command"] = command;
  m["arguments"] = args;
  m["seed"] = s.nuts.seed;
  m["settings"] = gsfm::settings_json(s);
  m["versions"] = {{"gsfm", gsfm::kVersion},
                   {"compiler", __VERSION__},
                   {"cxx_standard", __cplusplus},
                   {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                         std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                         std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
                   {"cli11", CLI11_VERSION}};
  m["threads"] = gsfm::default_threads();
  m["wall_time_seconds"] = wall_time;
  m["outputs"] = out.files();
  for (auto& [k, v] : extra.items()) m[k] = v;
  auto os = out.open("manifest.json");
  os << m.dump(2) << '\n';
}

void write_fit(Output& out, const gsfm::FitResult& fit) {
  {
    auto os = out.open("draws.csv");
    gsfm::write_draws_csv(os, fit.chains, fit.names, true);
  }
  {
    auto os = out.open("summary.csv");
    gsfm::write_summary_csv(os, fit.summary);
  }
  {
    auto os = out.open("curves.csv");
    gsfm::write_curves_csv(os, fit.curves);
  }
  for (const auto& band : fit.curves) {
    auto os = out.open("curve_k" + std::to_string(band.k) + "_j" + std::to_string(band.j) + ".csv");
    gsfm::write_curves_csv(os, std::span<const gsfm::SurvivalBand>(&band, 1));
  }
  {
    auto os = out.open("sampler_stats.json");
    os << gsfm::sampler_stats_json(fit.chains).dump() << '\n';
  }
  std::cout << gsfm::format_summary(fit.summary);
  std::size_t div = 0;
  for (const auto& ch : fit.chains) div += ch.divergences();
  if (div) std::cout << div << " divergent transitions after warmup\n";
}

json fit_extra(const gsfm::FitResult& fit) {
  json extra;
  extra["pooled"] = fit.pooled;
  extra["dimension"] = fit.layout.size();
  extra["subjects"] = fit.data.n();
  extra["records"] = fit.data.size();
  extra["chain_wall_time_seconds"] = fit.wall_time;
  std::size_t div = 0;
  for (const auto& ch : fit.chains) div += ch.divergences();
  extra["divergences"] = div;
  if (!fit.curves.empty()) extra["first_recurrence_curves_cross"] = gsfm::curves_cross(fit.curves, 1);
  return extra;
}

gsfm::FitOptions fit_options(const Flags& f, const gsfm::RunSettings& s) {
  gsfm::FitOptions o;
  o.hyper = s.hyper;
  o.nuts = s.nuts;
  o.pooled = f.pooled;
  o.threads = f.threads;
  return o;
}

int run_fit(const Flags& f, const std::vector<std::string>& args) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto s = settings_from(f);
  const auto ds = read_dataset(f.data);
  const auto fit = gsfm::fit_gsfm(ds, fit_options(f, s));
  Output out(f.out);
  write_fit(out, fit);
  write_manifest(out, "fit", args, s,
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), fit_extra(fit));
  return 0;
}

int run_gen_data(const Flags& f, const std::vector<std::string>& args) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto s = settings_from(f);
  const auto cfg = gsfm::scenario_by_name(f.scenario);
  const auto ds = gsfm::gen_dataset(cfg, s.nuts.seed);
  Output out(f.out);
  {
    auto os = out.open("dataset.csv");
    gsfm::write_csv(os, ds);
  }
  std::cout << "generated " << ds.n() << " subjects, " << ds.size() << " records, censoring rate "
            << gsfm::censoring_rate(ds) << '\n';
  write_manifest(out, "gen-data", args, s,
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(),
                 {{"scenario", f.scenario}, {"censoring_rate", gsfm::censoring_rate(ds)}});
  return 0;
}

int run_simulate(const Flags& f, const std::vector<std::string>& args) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto s = settings_from(f);
  const auto cfg = gsfm::scenario_by_name(f.scenario);
  const auto ds = gsfm::gen_dataset(cfg, s.nuts.seed);
  Output out(f.out);
  {
    auto os = out.open("dataset.csv");
    gsfm::write_csv(os, ds);
  }
  const auto fit = gsfm::fit_gsfm(ds, fit_options(f, s));
  write_fit(out, fit);
  auto extra = fit_extra(fit);
  extra["scenario"] = f.scenario;
  extra["censoring_rate"] = gsfm::censoring_rate(ds);
  write_manifest(out, "simulate", args, s,
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), extra);
  return 0;
}

int run_replicate(const Flags& f, const std::vector<std::string>& args) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto s = settings_from(f);
  auto cfg = gsfm::scenario_by_name(f.scenario);
  cfg.replications = s.replications;
  cfg.seed = s.nuts.seed;
  const auto study = gsfm::replicate_study(cfg, gsfm::gsfm_fitter(s.hyper, s.nuts), f.threads);
  Output out(f.out);
  {
    auto os = out.open("metrics.csv");
    gsfm::write_metrics_csv(os, study.metrics);
  }
  {
    auto os = out.open("replications.csv");
    gsfm::write_replications_csv(os, study, {"beta1", "beta2", "tau"});
  }
  gsfm::write_metrics_csv(std::cout, study.metrics);
  if (!study.flagged.empty()) {
    std::cout << study.flagged.size() << " replication(s) with R-hat >= " << gsfm::kReplicationRhat << '\n';
  }
  write_manifest(out, "replicate", args, s,
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(),
                 {{"scenario", f.scenario},
                  {"replications", cfg.replications},
                  {"flagged_replications", study.flagged},
                  {"mean_censoring_rate", study.mean_censoring}});
  return 0;
}

int run_km(const Flags& f, const std::vector<std::string>& args) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto ds = read_dataset(f.data);
  bool by_stratum = false, by_recurrence = false;
  std::stringstream ss(f.by);
  for (std::string key; std::getline(ss, key, ',');) {
    key = std::string(gsfm::csv::trim(key));
    if (key == "stratum") {
      by_stratum = true;
    } else if (key == "recurrence") {
      by_recurrence = true;
    } else if (key != "none" && !key.empty()) {
      throw gsfm::Error("--by: unknown key '" + key + "' (use stratum, recurrence or none)");
    }
  }
  const auto curves = gsfm::km_by(ds, by_stratum, by_recurrence);
  Output out(f.out);
  {
    auto os = out.open("km.csv");
    gsfm::write_km_csv(os, curves);
  }
  std::cout << curves.size() << " Kaplan-Meier curve(s)\n";
  write_manifest(out, "km", args, settings_from(f),
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(),
                 {{"by", f.by}, {"curves", curves.size()}});
  return 0;
}

int run_prepare_bladder(const Flags& f, const std::vector<std::string>& args) {
  const auto t0 = std::chrono::steady_clock::now();
  if (f.data.empty()) throw gsfm::Error("--data is required");
  std::ifstream in(f.data);
  if (!in) throw gsfm::Error("cannot open data file '" + f.data + "'");
  const auto raw = gsfm::load_csv(in, {}, gsfm::LoadOptions{false, true});
  gsfm::BladderOptions opts;
  if (f.carry_forward) opts.missing = gsfm::MissingCovariates::carry_forward;
  const auto ds = gsfm::prepare_bladder(raw, opts);
  Output out(f.out);
  {
    auto os = out.open("bladder.csv");
    gsfm::write_csv(os, ds);
  }
  {
    auto os = out.open("bladder_strata.csv");
    gsfm::write_strata_labels(os, {{1, "placebo"}, {2, "pyridoxine"}, {3, "thiotepa"}});
  }
  std::cout << "prepared " << ds.n() << " subjects, " << ds.size() << " records\n";
  write_manifest(out, "prepare-bladder", args, settings_from(f),
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(),
                 {{"carry_forward", f.carry_forward}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian shared frailty model with an ANOVA DDP baseline"};
  app.require_subcommand(1);
  Flags f;
  std::vector<std::string> args(argv + 1, argv + argc);

  auto sampler_flags = [&](CLI::App* sub) {
    sub->add_option("--config", f.config, "JSON settings file (flags override it)");
    sub->add_option("--out", f.out, "output directory")->capture_default_str();
    sub->add_option("--chains", f.chains, "number of chains");
    sub->add_option("--warmup", f.warmup, "warmup iterations per chain");
    sub->add_option("--draws", f.draws, "retained iterations per chain");
    sub->add_option("--seed", f.seed, "random seed");
    sub->add_option("--trunc", f.trunc, "truncation level L");
    sub->add_option("--mass", f.mass, "DP mass M");
    sub->add_option("--target-accept", f.target_accept, "dual averaging target");
    sub->add_option("--max-tree-depth", f.max_depth, "NUTS maximum tree depth");
    sub->add_option("--threads", f.threads, "worker threads (default: GSFM_THREADS or all cores)");
  };

  auto* fit = app.add_subcommand("fit", "fit the model to a dataset");
  fit->add_option("--data", f.data, "dataset CSV")->required();
  fit->add_flag("--pooled", f.pooled, "single shared baseline with stratum indicators");
  sampler_flags(fit);

  auto* sim = app.add_subcommand("simulate", "generate a scenario dataset and fit it");
  sim->add_option("--scenario", f.scenario, "scenario name")->capture_default_str();
  sim->add_flag("--pooled", f.pooled, "single shared baseline with stratum indicators");
  sampler_flags(sim);

  auto* rep = app.add_subcommand("replicate", "repeated generate-and-fit study");
  rep->add_option("--scenario", f.scenario, "scenario name")->capture_default_str();
  rep->add_option("--reps", f.reps, "number of replications");
  sampler_flags(rep);

  auto* gen = app.add_subcommand("gen-data", "generate a scenario dataset");
  gen->add_option("--scenario", f.scenario, "scenario name")->capture_default_str();
  gen->add_option("--seed", f.seed, "random seed");
  gen->add_option("--out", f.out, "output directory")->capture_default_str();

  auto* km = app.add_subcommand("km", "Kaplan-Meier curves");
  km->add_option("--data", f.data, "dataset CSV")->required();
  km->add_option("--by", f.by, "split keys: stratum, recurrence, none")->capture_default_str();
  km->add_option("--out", f.out, "output directory")->capture_default_str();

  auto* prep = app.add_subcommand("prepare-bladder", "convert raw bladder records to model units");
  prep->add_option("--data", f.data, "raw records CSV")->required();
  prep->add_flag("--carry-forward", f.carry_forward, "fill missing covariates from the subject's previous record");
  prep->add_option("--out", f.out, "output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (fit->parsed()) return run_fit(f, args);
    if (sim->parsed()) return run_simulate(f, args);
    if (rep->parsed()) return run_replicate(f, args);
    if (gen->parsed()) return run_gen_data(f, args);
    if (km->parsed()) return run_km(f, args);
    if (prep->parsed()) return run_prepare_bladder(f, args);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
