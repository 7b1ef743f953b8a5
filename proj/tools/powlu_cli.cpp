// Command-line front end: curve export, property verification, training,
// the m-sweep comparison, and statistics re-export.
//
// Exit codes: 0 success, 2 usage error, 3 verification failure,
// 4 training abort, 5 I/O failure, 1 anything else.

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "powlu/properties.hpp"
#include "powlu/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitUsage = 2;
constexpr int kExitVerify = 3;
constexpr int kExitTrain = 4;
constexpr int kExitIo = 5;

std::vector<std::string> split(const std::string& s, char delim) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(delim, start);
    if (pos == std::string::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  for (const std::string& piece : split(s, ','))
    if (!piece.empty()) out.push_back(powlu::parse_double(piece));
  return out;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw powlu::IoError("cannot create directory: " + dir.string());
}

int cmd_curves(const std::string& kinds_arg, double m, double clip,
               const std::string& range, std::size_t points,
               const fs::path& out_dir) {
  const std::vector<std::string> range_parts = split(range, ':');
  if (range_parts.size() != 2)
    throw std::invalid_argument("--range expects LO:HI");
  const double lo = powlu::parse_double(range_parts[0]);
  const double hi = powlu::parse_double(range_parts[1]);
  if (!(lo < hi)) throw std::invalid_argument("--range: LO must be < HI");
  if (points < 2) throw std::invalid_argument("--points must be >= 2");

  std::vector<powlu::ActivationKind> kinds;
  for (const std::string& name : split(kinds_arg, ',')) {
    if (name.empty()) continue;
    kinds.push_back(
        powlu::make_kind(powlu::activation_from_string(name), m, clip));
  }
  if (kinds.empty()) throw std::invalid_argument("--kinds: no kinds given");

  std::string csv = "kind,m,x,value,derivative\n";
  const double span = hi - lo;
  for (const powlu::ActivationKind& kind : kinds) {
    const std::string m_col =
        kind.uses_m() ? powlu::format_double(kind.m) : std::string();
    for (std::size_t i = 0; i < points; ++i) {
      const double x =
          i + 1 == points ? hi : lo + double(i) * span / double(points - 1);
      const powlu::ScalarEval ev = powlu::eval_self(kind, x);
      csv += std::string(powlu::to_string(kind.variant)) + ',' + m_col + ',' +
             powlu::format_double(x) + ',' + powlu::format_double(ev.value) +
             ',' + powlu::format_double(ev.derivative) + '\n';
    }
  }
  ensure_dir(out_dir);
  const fs::path file = out_dir / "curves.csv";
  powlu::detail::write_file(file, csv);
  std::cout << "wrote " << file.string() << " (" << kinds.size() * points
            << " data rows)\n";
  return kExitOk;
}

json monotonicity_json(const powlu::MonotonicityReport& r) {
  json j;
  j["certified_monotone"] = r.certified_monotone;
  j["min_derivative"] = r.min_derivative;
  j["grid"] = {r.grid_lo, r.grid_hi};
  if (r.first_violation_x)
    j["first_violation_x"] = *r.first_violation_x;
  else
    j["first_violation_x"] = nullptr;
  return j;
}

int cmd_verify(const std::string& m_arg, const fs::path& out_dir) {
  const std::vector<double> ms = parse_double_list(m_arg);
  if (ms.empty()) throw std::invalid_argument("--m: need at least one value");
  for (double m : ms)
    if (!(m > 0.0)) throw std::invalid_argument("--m: values must be positive");

  bool all_ok = true;
  json report;
  const powlu::BoundConstants bc = powlu::find_bound_constants();
  report["constants"] = {{"t0", bc.t0},
                         {"t_star", bc.t_star},
                         {"m_upper", bc.m_upper},
                         {"paper_bound", 10.0}};

  json props;

  {  // phi shape: rises to phi(1) = 2, falls beyond, zero at t0
    bool ok = powlu::phi(1.0) == 2.0 && std::abs(powlu::phi(bc.t0)) < 1e-10;
    double prev = powlu::phi(1e-6);
    for (int i = 1; i <= 100; ++i) {
      const double t = double(i) / 100.0;
      const double v = powlu::phi(t);
      if (v < prev) ok = false;
      prev = v;
    }
    prev = powlu::phi(1.0);
    for (int i = 1; i <= 100; ++i) {
      const double t = 1.0 + double(i) / 10.0;
      const double v = powlu::phi(t);
      if (v > prev) ok = false;
      prev = v;
    }
    props["phi_shape"] = {{"pass", ok}, {"phi_at_1", powlu::phi(1.0)}};
    all_ok = all_ok && ok;
  }

  {  // lower bound for t <= t0: g' >= 1/t^2 + 1/(1+e^{t^2}) > 0
    bool ok = true;
    for (double m : {0.5, 3.0, 9.9, 20.0})
      for (int i = 1; i <= 200; ++i) {
        const double t = bc.t0 * double(i) / 200.0;
        const double bound = 1.0 / (t * t) + powlu::sigmoid(-t * t);
        const double g = powlu::g_prime(t * t, m);
        if (!(g >= bound * (1.0 - 1e-12)) || !(g > 0.0)) ok = false;
      }
    props["lower_bound_inequality"] = {{"pass", ok}};
    all_ok = all_ok && ok;
  }

  {  // bound sharpness around m_upper
    const auto below = powlu::scan_monotonicity(bc.m_upper - 0.1, 100000);
    const auto above = powlu::scan_monotonicity(bc.m_upper + 0.5, 100000);
    const bool ok = below.certified_monotone && !above.certified_monotone;
    props["threshold_sharpness"] = {{"pass", ok},
                                    {"below", monotonicity_json(below)},
                                    {"above", monotonicity_json(above)}};
    all_ok = all_ok && ok;
  }

  {  // derivative consistency: eval_self derivative == value * g'
    bool ok = true;
    for (double m : {2.0, 3.0, 4.0}) {
      const powlu::ActivationKind kind = powlu::ActivationKind::powlu(m);
      for (int i = 0; i <= 300; ++i) {
        const double x = std::exp(std::log(1e-3) +
                                  double(i) / 300.0 * std::log(5e4 / 1.0));
        const powlu::ScalarEval ev = powlu::eval_self(kind, x);
        const double reconstructed = ev.value * powlu::g_prime(x, m);
        const double err = std::abs(reconstructed - ev.derivative) /
                           std::max({1e-300, std::abs(ev.derivative)});
        if (err > 1e-10) ok = false;
      }
    }
    props["derivative_consistency"] = {{"pass", ok}};
    all_ok = all_ok && ok;
  }

  {  // non-linearity witness: best affine fit leaves a visible residual
    bool ok = true;
    json res;
    for (const powlu::ActivationKind& kind :
         {powlu::ActivationKind::powlu(3.0), powlu::ActivationKind::swiglu(),
          powlu::ActivationKind::swiglu_clip(), powlu::ActivationKind::silu(),
          powlu::ActivationKind::abl_a(3.0), powlu::ActivationKind::abl_b(3.0),
          powlu::ActivationKind::abl_c(3.0)}) {
      const double r = powlu::max_affine_residual(kind);
      res[std::string(powlu::to_string(kind.variant))] = r;
      if (!(r > 0.1)) ok = false;
    }
    props["nonlinearity_witness"] = {{"pass", ok}, {"max_residuals", res}};
    all_ok = all_ok && ok;
  }

  report["properties"] = props;

  json per_m = json::array();
  for (double m : ms) {
    json entry;
    entry["m"] = m;
    const bool within = m < bc.m_upper;
    entry["within_computed_bound"] = within;
    const auto scan = powlu::scan_monotonicity(m, 100000);
    entry["monotonicity"] = monotonicity_json(scan);
    const bool expected =
        within ? scan.certified_monotone : !scan.certified_monotone;
    entry["expected_outcome_ok"] = expected;
    bool m_ok = expected;

    if (m < 10.0) {
      const powlu::ActivationKind kind = powlu::ActivationKind::powlu(m);
      const auto zr = powlu::check_zero_regularity(kind);
      bool zr_ok = zr.continuity_gap < 1e-15 && std::abs(zr.left_dq) < 1e-8 &&
                   zr.ladder_monotone;
      if (m >= 1.0) zr_ok = zr_ok && std::abs(zr.right_dq) < 1e-8;
      entry["zero_regularity"] = {{"continuity_gap", zr.continuity_gap},
                                  {"left_dq", zr.left_dq},
                                  {"right_dq", zr.right_dq},
                                  {"ladder_monotone", zr.ladder_monotone},
                                  {"pass", zr_ok}};
      m_ok = m_ok && zr_ok;

      bool growth_ok = true;
      double prev = powlu::growth_ratio(1e3, m);
      for (int i = 1; i <= 200; ++i) {
        const double x = std::exp(std::log(1e3) +
                                  double(i) / 200.0 * std::log(1e8 / 1e3));
        const double r = powlu::growth_ratio(x, m);
        if (r > prev) growth_ok = false;
        prev = r;
      }
      const double ratio_1e6 = powlu::growth_ratio(1e6, m);
      growth_ok = growth_ok && std::isfinite(ratio_1e6) && ratio_1e6 >= 1.0;
      entry["growth"] = {{"ratio_at_1e6", ratio_1e6},
                         {"decreasing_on_1e3_1e8", growth_ok},
                         {"pass", growth_ok}};
      m_ok = m_ok && growth_ok;
    }

    entry["pass"] = m_ok;
    all_ok = all_ok && m_ok;
    per_m.push_back(entry);
  }
  report["per_m"] = per_m;
  report["overall_pass"] = all_ok;

  ensure_dir(out_dir);
  const fs::path file = out_dir / "verify_report.json";
  powlu::detail::write_file(file, report.dump(2) + "\n");

  std::cout << "t0 = " << powlu::format_double(bc.t0)
            << ", t* = " << powlu::format_double(bc.t_star)
            << ", m_upper = " << powlu::format_double(bc.m_upper) << "\n";
  for (const auto& [name, value] : props.items())
    std::cout << (value["pass"].get<bool>() ? "PASS " : "FAIL ") << name << "\n";
  for (const auto& entry : per_m)
    std::cout << (entry["pass"].get<bool>() ? "PASS " : "FAIL ")
              << "m=" << entry["m"].get<double>() << (entry["within_computed_bound"].get<bool>()
                      ? " (within bound)"
                      : " (expects violation)")
              << "\n";
  std::cout << "report: " << file.string() << "\n";
  return all_ok ? kExitOk : kExitVerify;
}

powlu::TrainConfig resolve_config(const std::string& config_path,
                                  bool seed_given, std::uint64_t seed,
                                  const powlu::TrainConfig& fallback) {
  powlu::TrainConfig cfg =
      config_path.empty() ? fallback : powlu::load_config_file(config_path);
  if (seed_given) cfg.seed = seed;
  return cfg;
}

int cmd_train(const std::string& config_path, bool seed_given,
              std::uint64_t seed, const fs::path& out_dir) {
  const powlu::TrainConfig cfg =
      resolve_config(config_path, seed_given, seed, powlu::TrainConfig{});
  const powlu::TrainRun run = powlu::train(cfg);
  powlu::save_run(run, out_dir);
  std::cout << "kind=" << cfg.kind.label()
            << " initial_loss=" << powlu::format_double(run.history.front().loss)
            << " final_loss=" << powlu::format_double(run.history.back().loss)
            << "\nrun directory: " << out_dir.string() << "\n";
  return kExitOk;
}

int cmd_sweep(const std::string& config_path, const std::string& m_arg,
              bool seed_given, std::uint64_t seed, const fs::path& out_dir) {
  const std::vector<double> ms = parse_double_list(m_arg);
  if (ms.empty()) throw std::invalid_argument("--m: need at least one value");
  powlu::TrainConfig base = resolve_config(config_path, seed_given, seed,
                                           powlu::sweep_default_config());

  std::vector<powlu::ActivationKind> kinds{powlu::ActivationKind::swiglu()};
  for (double m : ms) kinds.push_back(powlu::ActivationKind::powlu(m));

  std::vector<powlu::TrainRun> runs;
  for (const powlu::ActivationKind& kind : kinds) {
    powlu::TrainConfig cfg = base;
    cfg.kind = kind;
    runs.push_back(powlu::train(cfg));
    std::string label{powlu::to_string(kind.variant)};
    if (kind.variant == powlu::Activation::PowLU)
      label += "_m" + powlu::format_double(kind.m);
    powlu::save_run(runs.back(), out_dir / label);
  }

  const std::vector<powlu::RunSummary> table = powlu::compare_runs(runs);
  std::string csv = "kind,m,final_loss,loss_delta,peak_abs_activation,peak_e4m3_saturation\n";
  for (std::size_t i = 0; i < table.size(); ++i) {
    const powlu::ActivationKind& kind = runs[i].config.kind;
    csv += std::string(powlu::to_string(kind.variant)) + ',' +
           (kind.uses_m() ? powlu::format_double(kind.m) : std::string()) + ',' +
           powlu::format_double(table[i].final_loss) + ',' +
           powlu::format_double(table[i].loss_delta) + ',' +
           powlu::format_double(table[i].peak_abs_activation) + ',' +
           powlu::format_double(table[i].peak_e4m3_saturation) + '\n';
  }
  ensure_dir(out_dir);
  powlu::detail::write_file(out_dir / "sweep.csv", csv);

  for (const powlu::RunSummary& row : table)
    std::cout << row.kind_label << ": final_loss="
              << powlu::format_double(row.final_loss)
              << " delta=" << powlu::format_double(row.loss_delta)
              << " peak|act|=" << powlu::format_double(row.peak_abs_activation)
              << " peak_e4m3_sat="
              << powlu::format_double(row.peak_e4m3_saturation) << "\n";
  std::cout << "sweep table: " << (out_dir / "sweep.csv").string() << "\n";
  return kExitOk;
}

int cmd_stats(const fs::path& run_dir, const fs::path& out_dir,
              const std::string& format) {
  const auto history = powlu::load_history(run_dir / "history.csv");
  const auto bands = powlu::load_bands(run_dir / "bands.csv");
  const auto channels = powlu::load_channels(run_dir / "channels.csv");
  auto saturation = powlu::load_saturation(run_dir / "saturation.csv");
  if (!format.empty()) {
    const powlu::Fp8Format keep = powlu::fp8_format_from_string(format);
    std::erase_if(saturation,
                  [keep](const powlu::SaturationStat& s) { return s.format != keep; });
  }
  ensure_dir(out_dir);
  powlu::detail::write_file(out_dir / "history.csv",
                            powlu::export_history(history));
  powlu::export_bands(bands, out_dir / "bands.csv");
  powlu::export_channels(channels, out_dir / "channels.csv");
  powlu::export_saturation(saturation, out_dir / "saturation.csv");
  std::cout << "re-exported " << history.size() << " history rows, "
            << bands.size() << " bands, " << channels.size()
            << " channel maps, " << saturation.size()
            << " saturation stats to " << out_dir.string() << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PowLU activation function toolkit"};
  app.require_subcommand(1);

  std::string curves_kinds = "powlu,swiglu,swiglu_clip";
  double curves_m = 3.0;
  double curves_clip = 7.0;
  std::string curves_range = "-6:8";
  std::size_t curves_points = 1401;
  std::string curves_out;
  CLI::App* curves = app.add_subcommand(
      "curves", "Export function/derivative curves as long-format CSV");
  curves->add_option("--kinds", curves_kinds,
                     "comma list: powlu,swiglu,swiglu_clip,silu,abl_a,abl_b,abl_c");
  curves->add_option("--m", curves_m, "exponent hyperparameter");
  curves->add_option("--clip", curves_clip, "swiglu_clip threshold");
  curves->add_option("--range", curves_range, "LO:HI");
  curves->add_option("--points", curves_points, "number of sample points");
  curves->add_option("--out", curves_out, "output directory")->required();

  std::string verify_m = "3";
  std::string verify_out;
  CLI::App* verify = app.add_subcommand(
      "verify", "Certify analytic properties; JSON report + exit code");
  verify->add_option("--m", verify_m, "comma list of m values")->required();
  verify->add_option("--out", verify_out, "output directory")->required();

  std::string train_config;
  std::uint64_t train_seed = 0;
  std::string train_out;
  CLI::App* train = app.add_subcommand("train", "Run one training experiment");
  train->add_option("--config", train_config, "key=value config file");
  CLI::Option* train_seed_opt =
      train->add_option("--seed", train_seed, "seed override");
  train->add_option("--out", train_out, "run output directory")->required();

  std::string sweep_config;
  std::string sweep_m = "2,3,4";
  std::uint64_t sweep_seed = 0;
  std::string sweep_out;
  CLI::App* sweep = app.add_subcommand(
      "sweep", "Fixed-budget comparison of SwiGLU vs PowLU over m values");
  sweep->add_option("--config", sweep_config, "base config file");
  sweep->add_option("--m", sweep_m, "comma list of PowLU m values");
  CLI::Option* sweep_seed_opt =
      sweep->add_option("--seed", sweep_seed, "seed override");
  sweep->add_option("--out", sweep_out, "output directory")->required();

  std::string stats_run;
  std::string stats_out;
  std::string stats_format;
  CLI::App* stats = app.add_subcommand(
      "stats", "Re-export the CSV logs of a saved run directory");
  stats->add_option("run_dir", stats_run, "existing run directory")->required();
  stats->add_option("--out", stats_out, "output directory")->required();
  stats->add_option("--format", stats_format, "filter saturation: e4m3|e5m2")
      ->check(CLI::IsMember({"e4m3", "e5m2"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (curves->parsed())
      return cmd_curves(curves_kinds, curves_m, curves_clip, curves_range,
                        curves_points, curves_out);
    if (verify->parsed()) return cmd_verify(verify_m, verify_out);
    if (train->parsed())
      return cmd_train(train_config, train_seed_opt->count() > 0, train_seed,
                       train_out);
    if (sweep->parsed())
      return cmd_sweep(sweep_config, sweep_m, sweep_seed_opt->count() > 0,
                       sweep_seed, sweep_out);
    if (stats->parsed()) return cmd_stats(stats_run, stats_out, stats_format);
  } catch (const powlu::IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const powlu::NumericError& e) {
    std::cerr << "training error: " << e.what() << "\n";
    return kExitTrain;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitUsage;
}
