#pragma once

// Desk-scale training harness: seeded synthetic regression tasks pushed
// through a stack of gated FFN blocks (optionally expert-routed), trained
// with Adam under full instrumentation of the two tensor roles that matter
// for outlier diagnostics: the post-activation input of the second linear
// layer (forward) and the gradient arriving at the first linear layer
// (backward).

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "powlu/network.hpp"
#include "powlu/stats.hpp"

namespace powlu {

enum class Task { regression, heavy_tail_regression };

inline std::string_view to_string(Task t) {
  return t == Task::regression ? "regression" : "heavy_tail_regression";
}

inline Task task_from_string(std::string_view s) {
  if (s == "regression") return Task::regression;
  if (s == "heavy_tail_regression") return Task::heavy_tail_regression;
  throw std::invalid_argument("unknown task: " + std::string(s));
}

enum class InitOverride { none, negative_gate };

inline std::string_view to_string(InitOverride o) {
  return o == InitOverride::none ? "none" : "negative_gate";
}

inline InitOverride init_override_from_string(std::string_view s) {
  if (s == "none") return InitOverride::none;
  if (s == "negative_gate") return InitOverride::negative_gate;
  throw std::invalid_argument("unknown init_override: " + std::string(s));
}

struct TrainConfig {
  std::uint64_t seed = 1;
  std::size_t n_blocks = 2;
  std::size_t hidden = 32;
  std::size_t d_ff = 64;
  std::size_t n_experts = 0;  // 0 = plain FFN stack
  ActivationKind kind = ActivationKind::swiglu();
  double lr = 2e-3;
  std::size_t batch = 32;
  std::size_t steps = 500;
  Task task = Task::regression;
  std::size_t record_every = 10;
  InitOverride init_override = InitOverride::none;

  void validate() const {
    if (n_blocks < 1 || hidden < 1 || d_ff < 1 || batch < 1)
      throw std::invalid_argument("train config: dimensions must be >= 1");
    if (!(lr > 0.0)) throw std::invalid_argument("train config: lr must be positive");
    if (record_every < 1)
      throw std::invalid_argument("train config: record_every must be >= 1");
  }

  bool operator==(const TrainConfig&) const = default;
};

/// Seeded batch stream. Regression draws standard-normal inputs;
/// heavy_tail_regression draws Student-t(3) scaled by 2, deliberately
/// outlier-rich. Targets are input * map + sin(input) with a fixed random
/// map derived from the same seed.
class TaskGenerator {
 public:
  struct Batch {
    Matrix input;
    Matrix target;
  };

  TaskGenerator(Task task, std::uint64_t seed, std::size_t batch,
                std::size_t hidden)
      : task_(task), batch_(batch), hidden_(hidden), rng_(seed) {
    std::mt19937_64 map_rng(seed ^ 0x9e3779b97f4a7c15ull);
    std::normal_distribution<double> entry(0.0, 1.0 / std::sqrt(double(hidden)));
    map_ = Matrix(hidden, hidden);
    for (double& v : map_.values()) v = entry(map_rng);
  }

  Batch next() {
    Matrix input(batch_, hidden_);
    if (task_ == Task::regression) {
      std::normal_distribution<double> normal(0.0, 1.0);
      for (double& v : input.values()) v = normal(rng_);
    } else {
      std::student_t_distribution<double> t3(3.0);
      for (double& v : input.values()) v = 2.0 * t3(rng_);
    }
    Matrix target = matmul(input, map_);
    for (std::size_t i = 0; i < target.size(); ++i)
      target.values()[i] += std::sin(input.values()[i]);
    return {std::move(input), std::move(target)};
  }

 private:
  Task task_;
  std::size_t batch_;
  std::size_t hidden_;
  std::mt19937_64 rng_;
  Matrix map_;
};

inline TaskGenerator make_task(Task task, std::uint64_t seed, std::size_t batch,
                               std::size_t hidden) {
  return TaskGenerator(task, seed, batch, hidden);
}

struct HistoryRow {
  long step = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  bool operator==(const HistoryRow&) const = default;
};

struct TrainRun {
  TrainConfig config;
  std::vector<HistoryRow> history;  // steps+1 rows, row 0 = initial loss
  InstrumentationLog log;
  bool operator==(const TrainRun&) const = default;
};

namespace detail {

using BlockVariant = std::variant<GluFfnBlock, MoeLayer>;

inline void apply_negative_gate_override(GluFfnBlock& block) {
  // shrink the gate weights and push the pre-activation deep into the
  // negative branch; training steps cannot climb back over the margin
  for (double& v : block.w_gate.values()) v *= 0.05;
  for (double& v : block.gate_bias.values()) v = -9.0;
}

inline std::vector<BlockVariant> build_stack(const TrainConfig& cfg,
                                             std::mt19937_64& rng) {
  std::vector<BlockVariant> blocks;
  blocks.reserve(cfg.n_blocks);
  for (std::size_t i = 0; i < cfg.n_blocks; ++i) {
    if (cfg.n_experts == 0)
      blocks.emplace_back(GluFfnBlock::init(cfg.hidden, cfg.d_ff, cfg.kind, rng));
    else
      blocks.emplace_back(
          MoeLayer::init(cfg.hidden, cfg.d_ff, cfg.n_experts, cfg.kind, rng));
  }
  if (cfg.init_override == InitOverride::negative_gate) {
    for (BlockVariant& b : blocks) {
      if (auto* ffn = std::get_if<GluFfnBlock>(&b)) {
        apply_negative_gate_override(*ffn);
      } else {
        MoeLayer& moe = std::get<MoeLayer>(b);
        apply_negative_gate_override(moe.shared_expert);
        for (GluFfnBlock& e : moe.experts) apply_negative_gate_override(e);
      }
    }
  }
  return blocks;
}

inline void collect_params(std::vector<BlockVariant>& blocks,
                           std::vector<Matrix*>& out) {
  for (BlockVariant& b : blocks) {
    if (auto* ffn = std::get_if<GluFfnBlock>(&b)) {
      out.push_back(&ffn->w_gate);
      out.push_back(&ffn->gate_bias);
      out.push_back(&ffn->w_up);
      out.push_back(&ffn->w_down);
    } else {
      MoeLayer& moe = std::get<MoeLayer>(b);
      out.push_back(&moe.router);
      out.push_back(&moe.shared_expert.w_gate);
      out.push_back(&moe.shared_expert.gate_bias);
      out.push_back(&moe.shared_expert.w_up);
      out.push_back(&moe.shared_expert.w_down);
      for (GluFfnBlock& e : moe.experts) {
        out.push_back(&e.w_gate);
        out.push_back(&e.gate_bias);
        out.push_back(&e.w_up);
        out.push_back(&e.w_down);
      }
    }
  }
}

inline Matrix vconcat(const std::vector<const Matrix*>& parts) {
  std::size_t rows = 0;
  std::size_t cols = 0;
  for (const Matrix* p : parts) {
    if (p->empty()) continue;
    rows += p->rows();
    cols = p->cols();
  }
  Matrix out(rows, cols);
  std::size_t at = 0;
  for (const Matrix* p : parts) {
    if (p->empty()) continue;
    for (std::size_t r = 0; r < p->rows(); ++r, ++at)
      for (std::size_t c = 0; c < cols; ++c) out(at, c) = (*p)(r, c);
  }
  return out;
}

}  // namespace detail

/// Runs `steps` Adam updates of mean-squared-error training. History row 0 is
/// the initial loss (no update); row s is the loss of the batch processed at
/// step s before that step's update. Instrumentation is recorded at every
/// step s with s % record_every == 0, before the update. Deterministic per
/// seed. Aborts with a NumericError naming the offending tensor tag and step
/// if anything goes non-finite.
inline TrainRun train(const TrainConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::vector<detail::BlockVariant> blocks = detail::build_stack(cfg, rng);
  std::vector<Matrix*> params;
  detail::collect_params(blocks, params);
  std::vector<AdamState> states(params.size());
  const AdamConfig adam{cfg.lr, 0.9, 0.999, 1e-8};

  TaskGenerator task = make_task(cfg.task, cfg.seed, cfg.batch, cfg.hidden);
  TrainRun run;
  run.config = cfg;

  const auto check_finite = [](const Matrix& m, const std::string& tag,
                               long step) {
    if (!all_finite(m))
      throw NumericError("training aborted at step " + std::to_string(step) +
                         ": non-finite values in " + tag);
  };

  for (long step = 0; step <= long(cfg.steps); ++step) {
    TaskGenerator::Batch batch = task.next();
    const bool record = (step % long(cfg.record_every)) == 0;

    // forward
    Matrix h = batch.input;
    std::vector<FfnCache> ffn_caches(blocks.size());
    std::vector<MoeCache> moe_caches(blocks.size());
    std::vector<Matrix> fwd_tensor(blocks.size());
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const std::string tag = "block" + std::to_string(i) + ".fc2.fwd.x";
      Matrix y;
      if (const auto* ffn = std::get_if<GluFfnBlock>(&blocks[i])) {
        y = ffn->forward(h, &ffn_caches[i]);
        fwd_tensor[i] = ffn_caches[i].act;
      } else {
        const MoeLayer& moe = std::get<MoeLayer>(blocks[i]);
        y = moe.forward(h, &moe_caches[i]);
        std::vector<const Matrix*> parts{&moe_caches[i].shared_cache.act};
        for (const FfnCache& ec : moe_caches[i].expert_caches)
          parts.push_back(&ec.act);
        fwd_tensor[i] = detail::vconcat(parts);
      }
      check_finite(fwd_tensor[i], tag, step);
      add_inplace(h, y);  // residual connection around each block
    }
    check_finite(h, "output", step);

    // mean-squared-error loss over all entries
    double loss = 0.0;
    Matrix d_out(h.rows(), h.cols());
    const double inv_n = 1.0 / double(h.size());
    for (std::size_t i = 0; i < h.size(); ++i) {
      const double diff = h.values()[i] - batch.target.values()[i];
      loss += diff * diff * inv_n;
      d_out.values()[i] = 2.0 * diff * inv_n;
    }
    if (!std::isfinite(loss))
      throw NumericError("training aborted at step " + std::to_string(step) +
                         ": non-finite loss");

    // backward
    std::vector<Matrix> grads;
    grads.resize(params.size());
    std::size_t grad_cursor = params.size();
    Matrix g = d_out;
    std::vector<Matrix> bwd_tensor(blocks.size());
    for (std::size_t ri = blocks.size(); ri-- > 0;) {
      const std::string tag = "block" + std::to_string(ri) + ".fc1.bwd.dy";
      if (const auto* ffn = std::get_if<GluFfnBlock>(&blocks[ri])) {
        FfnGrads fg = ffn->backward(ffn_caches[ri], g);
        bwd_tensor[ri] = std::move(fg.fc1_dy);
        grads[--grad_cursor] = std::move(fg.w_down);
        grads[--grad_cursor] = std::move(fg.w_up);
        grads[--grad_cursor] = std::move(fg.gate_bias);
        grads[--grad_cursor] = std::move(fg.w_gate);
        add_inplace(g, fg.x);
      } else {
        const MoeLayer& moe = std::get<MoeLayer>(blocks[ri]);
        MoeGrads mg = moe.backward(moe_caches[ri], g);
        std::vector<const Matrix*> parts{&mg.shared.fc1_dy};
        for (const FfnGrads& eg : mg.experts) parts.push_back(&eg.fc1_dy);
        bwd_tensor[ri] = detail::vconcat(parts);
        for (std::size_t e = moe.experts.size(); e-- > 0;) {
          grads[--grad_cursor] = std::move(mg.experts[e].w_down);
          grads[--grad_cursor] = std::move(mg.experts[e].w_up);
          grads[--grad_cursor] = std::move(mg.experts[e].gate_bias);
          grads[--grad_cursor] = std::move(mg.experts[e].w_gate);
        }
        grads[--grad_cursor] = std::move(mg.shared.w_down);
        grads[--grad_cursor] = std::move(mg.shared.w_up);
        grads[--grad_cursor] = std::move(mg.shared.gate_bias);
        grads[--grad_cursor] = std::move(mg.shared.w_gate);
        grads[--grad_cursor] = std::move(mg.router);
        add_inplace(g, mg.x);
      }
      check_finite(bwd_tensor[ri], tag, step);
    }

    double grad_norm_sq = 0.0;
    for (const Matrix& gm : grads)
      for (double v : gm.values()) grad_norm_sq += v * v;
    const double grad_norm = std::sqrt(grad_norm_sq);
    if (!std::isfinite(grad_norm))
      throw NumericError("training aborted at step " + std::to_string(step) +
                         ": non-finite gradients");

    if (record) {
      for (std::size_t i = 0; i < blocks.size(); ++i) {
        run.log.record("block" + std::to_string(i) + ".fc2.fwd.x", step,
                       fwd_tensor[i], ChannelAxis::cols);
        run.log.record("block" + std::to_string(i) + ".fc1.bwd.dy", step,
                       bwd_tensor[i], ChannelAxis::cols);
      }
    }

    run.history.push_back({step, loss, grad_norm});
    if (step == long(cfg.steps)) break;

    for (std::size_t p = 0; p < params.size(); ++p)
      adam_step(*params[p], grads[p], states[p], adam, step + 1);
  }
  return run;
}

/// Side-by-side summary of runs that share task/seed/architecture and differ
/// only in activation kind.
struct RunSummary {
  std::string kind_label;
  double final_loss = 0.0;
  double loss_delta = 0.0;           // vs the first run
  double peak_abs_activation = 0.0;  // over forward-role bands
  double peak_e4m3_saturation = 0.0;  // over forward-role e4m3 stats
};

inline std::vector<RunSummary> compare_runs(const std::vector<TrainRun>& runs) {
  if (runs.empty()) throw std::invalid_argument("compare_runs: no runs");
  const TrainConfig& base = runs.front().config;
  for (const TrainRun& r : runs) {
    TrainConfig c = r.config;
    c.kind = base.kind;  // the only field allowed to differ
    if (!(c == base))
      throw std::invalid_argument(
          "compare_runs: runs differ in more than the activation kind");
  }
  std::vector<RunSummary> out;
  for (const TrainRun& r : runs) {
    RunSummary s;
    s.kind_label = r.config.kind.label();
    s.final_loss = r.history.back().loss;
    s.loss_delta = s.final_loss - runs.front().history.back().loss;
    for (const PercentileBand& b : r.log.bands)
      if (b.tag.find(".fwd.") != std::string::npos)
        s.peak_abs_activation =
            std::max({s.peak_abs_activation, std::abs(b.min), std::abs(b.max)});
    for (const SaturationStat& st : r.log.saturation)
      if (st.format == Fp8Format::e4m3 &&
          st.tag.find(".fwd.") != std::string::npos)
        s.peak_e4m3_saturation = std::max(s.peak_e4m3_saturation,
                                          st.saturated_fraction);
    out.push_back(std::move(s));
  }
  return out;
}

// ---- config file and run directory I/O ----

inline std::string config_to_text(const TrainConfig& cfg) {
  std::string out;
  out += "seed=" + std::to_string(cfg.seed) + "\n";
  out += "n_blocks=" + std::to_string(cfg.n_blocks) + "\n";
  out += "hidden=" + std::to_string(cfg.hidden) + "\n";
  out += "d_ff=" + std::to_string(cfg.d_ff) + "\n";
  out += "n_experts=" + std::to_string(cfg.n_experts) + "\n";
  out += "kind=" + std::string(to_string(cfg.kind.variant)) + "\n";
  out += "m=" + format_double(cfg.kind.m) + "\n";
  out += "clip=" + format_double(cfg.kind.clip) + "\n";
  out += "lr=" + format_double(cfg.lr) + "\n";
  out += "batch=" + std::to_string(cfg.batch) + "\n";
  out += "steps=" + std::to_string(cfg.steps) + "\n";
  out += "task=" + std::string(to_string(cfg.task)) + "\n";
  out += "record_every=" + std::to_string(cfg.record_every) + "\n";
  out += "init_override=" + std::string(to_string(cfg.init_override)) + "\n";
  return out;
}

/// Flat key=value text, '#' comments, unknown keys rejected.
inline TrainConfig parse_config_text(std::string_view text) {
  TrainConfig cfg;
  Activation variant = cfg.kind.variant;
  double m = cfg.kind.m;
  double clip = cfg.kind.clip;
  std::istringstream in{std::string(text)};
  std::string line;
  const auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t\r");
    const auto b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  };
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: expected key=value, got: " + line);
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "seed") cfg.seed = std::stoull(value);
    else if (key == "n_blocks") cfg.n_blocks = std::stoul(value);
    else if (key == "hidden") cfg.hidden = std::stoul(value);
    else if (key == "d_ff") cfg.d_ff = std::stoul(value);
    else if (key == "n_experts") cfg.n_experts = std::stoul(value);
    else if (key == "kind") variant = activation_from_string(value);
    else if (key == "m") m = parse_double(value);
    else if (key == "clip") clip = parse_double(value);
    else if (key == "lr") cfg.lr = parse_double(value);
    else if (key == "batch") cfg.batch = std::stoul(value);
    else if (key == "steps") cfg.steps = std::stoul(value);
    else if (key == "task") cfg.task = task_from_string(value);
    else if (key == "record_every") cfg.record_every = std::stoul(value);
    else if (key == "init_override")
      cfg.init_override = init_override_from_string(value);
    else throw std::invalid_argument("config: unknown key: " + key);
  }
  cfg.kind = make_kind(variant, m, clip);
  cfg.validate();
  return cfg;
}

inline TrainConfig load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("missing file: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

inline std::string export_history(std::span<const HistoryRow> rows) {
  std::string out = "step,loss,grad_norm\n";
  for (const HistoryRow& r : rows)
    out += std::to_string(r.step) + ',' + format_double(r.loss) + ',' +
           format_double(r.grad_norm) + '\n';
  return out;
}

/// Writes history.csv, bands.csv, channels.csv, saturation.csv and
/// config.txt under dir. Output is byte-identical across reruns of the same
/// config.
inline void save_run(const TrainRun& run, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory: " + dir.string());
  detail::write_file(dir / "history.csv", export_history(run.history));
  export_bands(run.log.bands, dir / "bands.csv");
  export_channels(run.log.channels, dir / "channels.csv");
  export_saturation(run.log.saturation, dir / "saturation.csv");
  detail::write_file(dir / "config.txt", config_to_text(run.config));
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return out;
}

inline std::vector<std::vector<std::string>> load_csv(
    const std::filesystem::path& path, const std::string& expected_header) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("missing file: " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != expected_header)
    throw IoError("bad header in " + path.string());
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    rows.push_back(split_csv_line(line));
  }
  return rows;
}

}  // namespace detail

inline std::vector<HistoryRow> load_history(const std::filesystem::path& path) {
  std::vector<HistoryRow> out;
  for (const auto& row : detail::load_csv(path, "step,loss,grad_norm")) {
    if (row.size() != 3) throw IoError("bad row in " + path.string());
    out.push_back({std::stol(row[0]), parse_double(row[1]), parse_double(row[2])});
  }
  return out;
}

inline std::vector<PercentileBand> load_bands(const std::filesystem::path& path) {
  std::vector<PercentileBand> out;
  for (const auto& row :
       detail::load_csv(path, "tag,step,min,p1,p25,p75,p99,max")) {
    if (row.size() != 8) throw IoError("bad row in " + path.string());
    out.push_back({row[0], std::stol(row[1]), parse_double(row[2]),
                   parse_double(row[3]), parse_double(row[4]),
                   parse_double(row[5]), parse_double(row[6]),
                   parse_double(row[7])});
  }
  return out;
}

inline std::vector<ChannelNormMap> load_channels(
    const std::filesystem::path& path) {
  std::vector<ChannelNormMap> out;
  for (const auto& row :
       detail::load_csv(path, "tag,step,rank,channel_index,l2_norm")) {
    if (row.size() != 5) throw IoError("bad row in " + path.string());
    const std::string& tag = row[0];
    const long step = std::stol(row[1]);
    if (out.empty() || out.back().tag != tag || out.back().step != step)
      out.push_back({tag, step, {}});
    out.back().sorted_norms.emplace_back(std::stoul(row[3]),
                                         parse_double(row[4]));
  }
  return out;
}

inline std::vector<SaturationStat> load_saturation(
    const std::filesystem::path& path) {
  std::vector<SaturationStat> out;
  for (const auto& row :
       detail::load_csv(path, "tag,step,format,saturated_fraction,max_abs")) {
    if (row.size() != 5) throw IoError("bad row in " + path.string());
    out.push_back({row[0], std::stol(row[1]), fp8_format_from_string(row[2]),
                   parse_double(row[3]), parse_double(row[4])});
  }
  return out;
}

/// Fixed-budget configuration for the m-sweep comparison: a short, gentle
/// schedule so the runs are compared mid-descent at an identical budget
/// rather than at their (kind-dependent) convergence plateaus.
inline TrainConfig sweep_default_config() {
  TrainConfig cfg;
  cfg.lr = 5e-4;
  cfg.batch = 64;
  cfg.steps = 150;
  return cfg;
}

}  // namespace powlu
