#include "trojanforge/pipelines.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <limits>
#include <ostream>
#include <random>
#include <stdexcept>

#include "trojanforge/error.hpp"
#include "trojanforge/metrics.hpp"
#include "trojanforge/minmax.hpp"
#include "trojanforge/poison_opt.hpp"
#include "trojanforge/seed.hpp"

namespace trojanforge {

namespace fs = std::filesystem;

namespace {

// Seed streams off cfg.seed. Each pipeline stage draws from its own stream so
// that changing one stage's settings leaves the others' randomness intact.
enum : std::uint64_t {
  kSyntheticTrainStream = 1,
  kSyntheticTestStream = 2,
  kCleanInitStream = 10,
  kCleanShuffleStream = 11,
  kAlternateStream = 20,
  kSweepStream = 30,
  kPoisonStream = 40,
  kBaselineInitStream = 41,
  kGameStream = 42,
  kBaselineGameStream = 43,
  kFreshDetectorStream = 44,
  kEvalStream = 45,
  kConfusionStream = 46,
  kGapStream = 47,
  kMmFreshDetectorStream = 48,
  kVerifyStream = 50,
};

constexpr std::size_t kDiagnosticProbes = 10000;

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string utc_stamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
  return buf;
}

std::vector<double> alpha_grid(double step) {
  const auto n = static_cast<std::size_t>(std::llround(1.0 / step));
  std::vector<double> g;
  for (std::size_t i = 1; i < n; ++i) g.push_back(static_cast<double>(i) * step);
  return g;
}

TrainConfig train_config(const ExperimentConfig& cfg, std::uint64_t seed) {
  TrainConfig t;
  t.lr = cfg.lr;
  t.epochs = cfg.epochs;
  t.batch_size = cfg.batch_size;
  t.seed = seed;
  return t;
}

GameConfig game_config(const ExperimentConfig& cfg, const ExperimentData& data, std::uint64_t seed) {
  GameConfig g;
  g.itr = cfg.itr;
  g.gamma1 = cfg.gamma1;
  g.gamma2 = cfg.gamma2;
  g.gamma3 = cfg.gamma3;
  g.probe_count = cfg.probe_count;
  g.batch_size = cfg.game_batch_size;
  g.mu = data.probe_mu;
  g.sigma = data.probe_sigma;
  g.bins = cfg.bins;
  g.seed = seed;
  g.trojan_only_l3 = cfg.trojan_only_l3;
  g.trace_every = cfg.trace_every;
  return g;
}

void write_trace(std::ostream& out, const GameTrace& trace) {
  out << "iter,det_loss,gen_fool_loss,cls_loss,mean_hd_trojan,mean_hd_clean,jsd,acc_c,acc_t\n";
  for (const GameRecord& r : trace.records) {
    out << r.iter << ',' << fmt(r.det_loss) << ',' << fmt(r.gen_fool_loss) << ',' << fmt(r.cls_loss) << ','
        << fmt(r.mean_hd_trojan) << ',' << fmt(r.mean_hd_clean) << ',' << fmt(r.jsd) << ',' << fmt(r.acc_c) << ','
        << fmt(r.acc_t) << '\n';
  }
}

EvalReport evaluate(ModelTag tag, const Model& model, const ExperimentData& data) {
  EvalReport r;
  r.model_tag = tag;
  r.acc_c = acc_clean(model, data.test);
  r.acc_t = acc_trojan(model, data.test, data.trigger);
  return r;
}

void add_detector_metrics(EvalReport& r, const Detector& det, const Model& model, const ExperimentConfig& cfg,
                          const ExperimentData& data) {
  const std::uint64_t s = derive_seed(cfg.seed, kEvalStream);
  r.evasion = evasion_rate(det, model, cfg.eval_batches, cfg.eval_probes, data.probe_mu, data.probe_sigma, s);
  r.detector_mean_trojan_prob =
      mean_trojan_probability(det, model, cfg.eval_batches, cfg.eval_probes, data.probe_mu, data.probe_sigma, s);
}

void save_model_file(const Model& model, const fs::path& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  save_model(model, f);
}

// Baseline Trojan (gamma2 = 0 game), the min-max Trojan started from it, and
// a fresh detector trained against the baseline.
struct GameRun {
  PoisonedDataset poisoned;
  GameResult baseline;
  GameResult mm;
  Detector fresh;
};

GameRun run_games(const ExperimentConfig& cfg, const ExperimentData& data, const Model& clean, std::ostream& log) {
  PoisonedDataset poisoned = poison_dataset(data.train, cfg.alpha, data.trigger, derive_seed(cfg.seed, kPoisonStream));
  GameConfig base_cfg = game_config(cfg, data, derive_seed(cfg.seed, kBaselineGameStream));
  base_cfg.gamma2 = 0.0;
  log << "baseline Trojan: " << base_cfg.itr << " iterations at alpha " << cfg.alpha << '\n';
  GameResult baseline =
      mm_trojan_train(clean, init_model(data.layer_dims, derive_seed(cfg.seed, kBaselineInitStream)), poisoned, base_cfg);

  GameConfig det_cfg = game_config(cfg, data, 0);
  det_cfg.gamma1 = cfg.detector_lr;
  Detector fresh = train_detector(clean, baseline.trojan, cfg.detector_itr, det_cfg,
                                  derive_seed(cfg.seed, kFreshDetectorStream));

  log << "min-max game: " << cfg.itr << " iterations\n";
  GameResult mm = mm_trojan_train(clean, baseline.trojan, poisoned, game_config(cfg, data, derive_seed(cfg.seed, kGameStream)));
  return {std::move(poisoned), std::move(baseline), std::move(mm), std::move(fresh)};
}

struct Equilibrium {
  double jsd_initial = 0.0;
  double jsd_final = 0.0;
  double mean_hd_trojan = 0.0;
  double gap = 0.0;
};

Equilibrium equilibrium(const ExperimentConfig& cfg, const ExperimentData& data, const Model& clean,
                        const GameResult& mm) {
  Equilibrium e;
  e.jsd_initial = mm.trace.records.front().jsd;
  e.jsd_final = mm.trace.records.back().jsd;
  e.mean_hd_trojan = mm.trace.records.back().mean_hd_trojan;
  const ProbeSet probes = sample_probes(kDiagnosticProbes, clean.input_dim(), data.probe_mu, data.probe_sigma,
                                       derive_seed(cfg.seed, kGapStream));
  const auto zt = model_outputs(mm.trojan, probes);
  const auto zc = model_outputs(clean, probes);
  e.gap = detector_estimate_gap(mm.detector, optimal_detector_estimate(zt, zc, cfg.bins), zt, zc);
  return e;
}

}  // namespace

RunOutputs::RunOutputs(fs::path dir, std::string subcommand, std::string stamp, std::string hash)
    : dir_(std::move(dir)), base_(subcommand + "_" + stamp), hash_(std::move(hash)) {}

fs::path RunOutputs::file(const std::string& part, const std::string& ext) const {
  return dir_ / (part.empty() ? base_ + "." + ext : base_ + "_" + part + "." + ext);
}

std::ofstream RunOutputs::csv(const std::string& part) const {
  const fs::path p = file(part, "csv");
  std::ofstream f(p);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f << "# config_hash=" << hash_ << '\n';
  written_.push_back(p);
  return f;
}

ExperimentData load_experiment_data(const ExperimentConfig& cfg) {
  ExperimentData d;
  if (cfg.data_source == DataSource::idx) {
    d.train = load_idx(cfg.train_images, cfg.train_labels);
    d.test = load_idx(cfg.test_images, cfg.test_labels);
    if (d.train.dim() != d.test.dim()) throw ConfigError("train and test images differ in size");
    d.test.num_classes = d.train.num_classes = std::max(d.train.num_classes, d.test.num_classes);
  } else {
    d.train = gen_synthetic(cfg.synthetic_classes, cfg.synthetic_train_per_class, cfg.synthetic_dim, cfg.synthetic_sep,
                            derive_seed(cfg.seed, kSyntheticTrainStream));
    d.test = gen_synthetic(cfg.synthetic_classes, cfg.synthetic_test_per_class, cfg.synthetic_dim, cfg.synthetic_sep,
                           derive_seed(cfg.seed, kSyntheticTestStream));
  }
  if (cfg.target_class >= d.train.num_classes) throw ConfigError("target_class out of range for the dataset");
  d.trigger = square_trigger_for(d.train, cfg.trigger_size, cfg.trigger_row, cfg.trigger_col, cfg.trigger_value,
                                 cfg.target_class);
  d.layer_dims.push_back(d.train.dim());
  d.layer_dims.insert(d.layer_dims.end(), cfg.hidden.begin(), cfg.hidden.end());
  d.layer_dims.push_back(d.train.num_classes);
  const PixelStats stats = pixel_stats(d.train);
  d.probe_mu = cfg.mu.value_or(stats.mean);
  d.probe_sigma = cfg.sigma.value_or(stats.stddev);
  if (!(d.probe_sigma > 0.0)) throw ConfigError("sigma resolves to 0: training pixels are constant");
  return d;
}

Model train_clean_model(const ExperimentConfig& cfg, const ExperimentData& data) {
  return train(init_model(data.layer_dims, derive_seed(cfg.seed, kCleanInitStream)), data.train.examples(),
               train_config(cfg, derive_seed(cfg.seed, kCleanShuffleStream)));
}

void cmd_train_clean(const ExperimentConfig& cfg, const RunOutputs& out, std::ostream& log) {
  const ExperimentData data = load_experiment_data(cfg);
  log << "training clean model on " << data.train.size() << " samples\n";
  const Model clean = train_clean_model(cfg, data);
  save_model_file(clean, out.file("model", "txt"));

  auto f = out.csv();
  f << "# acc_t of a clean model: measured rate of triggered test inputs sent to the target class\n";
  f << kReportHeader << '\n';
  write_report_row(f, evaluate(ModelTag::clean, clean, data));
}

void cmd_submodular_search(const ExperimentConfig& cfg, const RunOutputs& out, std::ostream& log) {
  const ExperimentData data = load_experiment_data(cfg);
  const Model clean = train_clean_model(cfg, data);
  const std::vector<double> grid = alpha_grid(cfg.grid_step);

  AlternateConfig ac;
  ac.layer_dims = data.layer_dims;
  ac.train = train_config(cfg, 0);
  ac.gamma = cfg.gamma;
  ac.seed = derive_seed(cfg.seed, kAlternateStream);
  log << "alternating search: up to " << cfg.rounds << " rounds, gamma " << cfg.gamma << '\n';
  const AlternateResult res = alternate_optimize(data.train, data.trigger, cfg.rounds, ac);

  {
    auto f = out.csv();
    f << "round,alpha,trojan_sum,clean_sum,stationary_point,fbar,lambda,beta,bound,certificate_holds\n";
    for (std::size_t r = 0; r < res.rounds.size(); ++r) {
      const AlternateRound& rd = res.rounds[r];
      const BoundCertificate c = bound_certificate(rd.surface, rd.alpha, grid);
      f << r + 1 << ',' << fmt(rd.alpha) << ',' << fmt(rd.surface.trojan_sum) << ',' << fmt(rd.surface.clean_sum)
        << ',' << fmt(rd.surface.stationary_point()) << ',' << fmt(c.achieved) << ',' << fmt(c.lambda) << ','
        << fmt(c.beta) << ',' << fmt(c.bound) << ',' << (c.holds() ? "true" : "false") << '\n';
      log << "round " << r + 1 << ": alpha " << rd.alpha << '\n';
    }
  }
  {
    auto f = out.csv("trace");
    f << "round,t,alpha,gamma_t,v,c,fbar\n";
    for (std::size_t r = 0; r < res.rounds.size(); ++r) {
      for (const GreedyStep& s : res.rounds[r].search.trace.steps) {
        f << r + 1 << ',' << s.t << ',' << fmt(s.alpha) << ',' << fmt(s.gamma_t) << ',' << fmt(s.v) << ','
          << fmt(s.c) << ',' << fmt(s.fbar) << '\n';
      }
    }
  }
  {
    auto f = out.csv("report");
    f << kReportHeader << '\n';
    write_report_row(f, evaluate(ModelTag::clean, clean, data));
    write_report_row(f, evaluate(ModelTag::baseline_trojan, res.model, data));
  }
  {
    auto f = out.csv("curve");
    f << "alpha,trojan_term,clean_term,total,fbar\n";
    TrainConfig tc = train_config(cfg, 0);
    tc.epochs = cfg.sweep_epochs;
    const std::uint64_t sweep_seed = derive_seed(cfg.seed, kSweepStream);
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const double a = grid[i];
      if (trojan_count_for(a, data.train.size()) == 0) {
        log << "warning: alpha " << a << " leaves no triggered sample, skipped\n";
        continue;
      }
      const std::uint64_t s = derive_seed(sweep_seed, i);
      const PoisonedDataset p = poison_dataset(data.train, a, data.trigger, derive_seed(s, 0));
      tc.seed = derive_seed(s, 1);
      const Model m = train_poisoned(p, data.layer_dims, tc, derive_seed(s, 2), PoisonObjective::split);
      const LossSplit ls = loss_split(m, p);
      f << fmt(a) << ',' << fmt(ls.trojan_term) << ',' << fmt(ls.clean_term) << ',' << fmt(ls.total) << ','
        << fmt(upper_bound(m, data.train, data.trigger, a)) << '\n';
    }
  }
  save_model_file(res.model, out.file("model", "txt"));
}

void cmd_mm_trojan(const ExperimentConfig& cfg, const RunOutputs& out, std::ostream& log) {
  const ExperimentData data = load_experiment_data(cfg);
  const Model clean = train_clean_model(cfg, data);
  const GameRun g = run_games(cfg, data, clean, log);

  // A detector trained afresh against the final min-max Trojan, for the confusion table.
  GameConfig det_cfg = game_config(cfg, data, 0);
  det_cfg.gamma1 = cfg.detector_lr;
  const Detector fresh_mm =
      train_detector(clean, g.mm.trojan, cfg.detector_itr, det_cfg, derive_seed(cfg.seed, kMmFreshDetectorStream));

  {
    auto f = out.csv();
    f << "# clean and baseline_trojan rows: detector trained against the baseline; "
         "mm_trojan row: final game detector\n";
    f << kReportHeader << '\n';
    EvalReport rc = evaluate(ModelTag::clean, clean, data);
    add_detector_metrics(rc, g.fresh, clean, cfg, data);
    write_report_row(f, rc);
    EvalReport rb = evaluate(ModelTag::baseline_trojan, g.baseline.trojan, data);
    add_detector_metrics(rb, g.fresh, g.baseline.trojan, cfg, data);
    write_report_row(f, rb);
    EvalReport rm = evaluate(ModelTag::mm_trojan, g.mm.trojan, data);
    add_detector_metrics(rm, g.mm.detector, g.mm.trojan, cfg, data);
    write_report_row(f, rm);
  }
  {
    auto f = out.csv("trace");
    write_trace(f, g.mm.trace);
  }
  {
    auto f = out.csv("baseline_trace");
    write_trace(f, g.baseline.trace);
  }
  {
    auto f = out.csv("confusion");
    f << "detector,source,verdict_clean,verdict_trojan\n";
    const ProbeSet probes = sample_probes(kDiagnosticProbes, clean.input_dim(), data.probe_mu, data.probe_sigma,
                                          derive_seed(cfg.seed, kConfusionStream));
    auto rows = [&](const char* name, const Detector& det, const Model& trojan) {
      const Confusion c = detector_confusion(det, clean, trojan, probes);
      f << name << ",clean," << fmt(c[0][0]) << ',' << fmt(c[0][1]) << '\n';
      f << name << ",trojan," << fmt(c[1][0]) << ',' << fmt(c[1][1]) << '\n';
    };
    rows("fresh_vs_baseline", g.fresh, g.baseline.trojan);
    rows("game_final", g.mm.detector, g.mm.trojan);
    rows("fresh_vs_mm", fresh_mm, g.mm.trojan);
  }
  {
    const Equilibrium e = equilibrium(cfg, data, clean, g.mm);
    auto f = out.csv("equilibrium");
    f << "jsd_initial,jsd_final,mean_hd_trojan_final,detector_estimate_gap\n";
    f << fmt(e.jsd_initial) << ',' << fmt(e.jsd_final) << ',' << fmt(e.mean_hd_trojan) << ',' << fmt(e.gap) << '\n';
  }
  save_model_file(g.mm.trojan, out.file("trojan_model", "txt"));
  save_model_file(g.mm.detector.network, out.file("detector_model", "txt"));
}

bool cmd_verify(const ExperimentConfig& cfg, const RunOutputs& out, std::ostream& log) {
  const ExperimentData data = load_experiment_data(cfg);
  const std::vector<double> grid = alpha_grid(cfg.grid_step);
  const std::uint64_t vseed = derive_seed(cfg.seed, kVerifyStream);
  const std::size_t n = data.train.size();

  auto f = out.csv();
  f << "check,draws,failures,worst,threshold,passed\n";
  bool all = true;
  auto row = [&](const char* check, std::size_t draws, std::size_t failures, double worst, double threshold) {
    const bool ok = failures == 0;
    all = all && ok;
    f << check << ',' << draws << ',' << failures << ',' << fmt(worst) << ',' << fmt(threshold) << ','
      << (ok ? "true" : "false") << '\n';
    log << check << ": " << (ok ? "pass" : "FAIL") << '\n';
  };

  // Random models at a spread of weight scales, so losses range from near-uniform
  // predictions to confident ones.
  auto random_model = [&](std::size_t i) {
    std::mt19937_64 rng(derive_seed(vseed, i));
    Model m = init_model(data.layer_dims, rng());
    const double scale = std::uniform_real_distribution<double>(0.5, 4.0)(rng);
    for (auto& w : m.weights) {
      for (double& v : w.data) v *= scale;
    }
    return std::pair{std::move(m), std::uniform_real_distribution<double>(0.0, 1.0)(rng)};
  };

  std::size_t dom_fail = 0, super_fail = 0, cert_fail = 0;
  double dom_worst = std::numeric_limits<double>::infinity();
  double super_worst = std::numeric_limits<double>::infinity();
  double cert_worst = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < cfg.verify_draws; ++i) {
    auto [model, u] = random_model(i);
    const BoundSurface surface = bound_surface(model, data.train, data.trigger);

    // alpha drawn so that at least one sample carries the trigger
    const double lo = 1.0 / static_cast<double>(n);
    const double alpha = lo + u * (1.0 - 2.0 * lo);
    const PoisonedDataset p = poison_dataset(data.train, alpha, data.trigger, derive_seed(vseed, 1000 + i));
    const double slack = surface.value(alpha) - loss_split(model, p).total;
    dom_worst = std::min(dom_worst, slack);
    if (slack < 0.0) ++dom_fail;

    const SupermodularityReport rep = check_supermodularity(surface, grid);
    super_worst = std::min(super_worst, rep.min_grid_second_diff);
    if (!rep.passed()) ++super_fail;

    const SearchResult sr = submodular_search(surface, cfg.gamma);
    const BoundCertificate c = bound_certificate(surface, sr.alpha, grid);
    cert_worst = std::max(cert_worst, c.achieved - c.bound);
    if (!c.holds()) ++cert_fail;
  }
  row("bound_dominance", cfg.verify_draws, dom_fail, dom_worst, 0.0);
  row("supermodularity", cfg.verify_draws, super_fail, super_worst, -SupermodularityReport::kTolerance);
  row("bound_certificate", cfg.verify_draws, cert_fail, cert_worst, 0.0);

  const Model clean = train_clean_model(cfg, data);
  const std::size_t dim = clean.input_dim();
  const auto z1 = model_outputs(clean, sample_probes(kDiagnosticProbes, dim, data.probe_mu, data.probe_sigma, derive_seed(vseed, 1)));
  const auto z2 = model_outputs(clean, sample_probes(kDiagnosticProbes, dim, data.probe_mu, data.probe_sigma, derive_seed(vseed, 2)));
  const double same = js_divergence(z1, z2, cfg.bins);
  row("identical_model_divergence", 1, same < 0.01 ? 0 : 1, same, 0.01);

  const BinnedEstimate est = optimal_detector_estimate(z1, z1, cfg.bins);
  std::size_t off_half = 0;
  for (std::size_t c = 0; c < est.bins(); ++c) {
    if (est.populated(c) && est.value[c] != 0.5) ++off_half;
  }
  row("optimal_detector_identical_lists", est.bins(), off_half, 0.5, 0.5);

  const GameRun g = run_games(cfg, data, clean, log);
  const Equilibrium e = equilibrium(cfg, data, clean, g.mm);
  row("divergence_trend", 1, e.jsd_final < e.jsd_initial ? 0 : 1, e.jsd_final - e.jsd_initial, 0.0);
  row("optimal_detector_agreement", 1, e.gap <= 0.1 ? 0 : 1, e.gap, 0.1);
  return all;
}

std::vector<std::string> subcommand_names() { return {"train-clean", "submodular-search", "mm-trojan", "verify"}; }

int run_subcommand(const std::string& subcommand, const ExperimentConfig& cfg, std::ostream& log) {
  fs::create_directories(cfg.out_dir);
  const std::string hash = config_hash(cfg);
  {
    std::ofstream rc(cfg.out_dir / "resolved_config.txt");
    if (!rc) throw std::runtime_error("cannot write " + (cfg.out_dir / "resolved_config.txt").string());
    rc << "# config_hash=" << hash << '\n' << serialize_config(cfg);
  }
  std::string stamp = utc_stamp();
  // Never overwrite an earlier run that landed in the same second.
  for (int k = 2; fs::exists(cfg.out_dir / (subcommand + "_" + stamp + ".csv")); ++k) {
    stamp = utc_stamp() + "-" + std::to_string(k);
  }
  const RunOutputs out(cfg.out_dir, subcommand, stamp, hash);

  if (subcommand == "train-clean") {
    cmd_train_clean(cfg, out, log);
  } else if (subcommand == "submodular-search") {
    cmd_submodular_search(cfg, out, log);
  } else if (subcommand == "mm-trojan") {
    cmd_mm_trojan(cfg, out, log);
  } else if (subcommand == "verify") {
    const bool ok = cmd_verify(cfg, out, log);
    for (const auto& p : out.written()) log << "wrote " << p.string() << '\n';
    return ok ? 0 : 1;
  } else {
    throw InvalidArgument("unknown subcommand '" + subcommand + "'");
  }
  for (const auto& p : out.written()) log << "wrote " << p.string() << '\n';
  return 0;
}

}  // namespace trojanforge
