// Command-line front end: dataset ingestion, stage execution, analysis, and
// report emission. `run` executes the whole pipeline with content-hash
// caching; the stage subcommands rerun a single stage in place.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>

#include "CLI11.hpp"
#include "json.hpp"
#include "tda/hash.hpp"
#include "tda/oracle.hpp"
#include "tda/pipeline.hpp"
#include "tda/rng.hpp"

using namespace tda;

namespace {

struct Flags {
  std::string config;
  std::string dataset, eval, pool, out;
  std::uint64_t seed = 0;
  int workers = 1;

  int d_model = 0, n_layers = 0, n_heads = 0, d_ff = 0, max_seq_len = 0;
  int steps = 0, batch_size = 0;
  double lr = 0.0;

  std::size_t factor_samples = 0, factor_positions = 0;
  double damping_scale = 0.0;

  std::size_t query_n = 0;
  bool no_sequence = false, no_token = false;

  int math_easy = 0, code_hard = 0;
  bool flip_reverse = false;

  double top_fraction = 0.0;
  std::size_t heatmap_examples = 0;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "JSON config file; flags override its values");
  cmd->add_option("--dataset", f.dataset, "training dataset (JSONL)");
  cmd->add_option("--eval", f.eval, "evaluation set (JSONL with prompt/answer)");
  cmd->add_option("--pool", f.pool, "replacement pool for the difficulty flip (JSONL)");
  cmd->add_option("--out", f.out, "output directory (default: $TDA_OUTPUT_ROOT or ./tda_out)");
  cmd->add_option("--seed", f.seed, "master seed");
  cmd->add_option("--workers", f.workers, "scoring worker threads");

  cmd->add_option("--d-model", f.d_model, "model width");
  cmd->add_option("--layers", f.n_layers, "transformer blocks");
  cmd->add_option("--heads", f.n_heads, "attention heads");
  cmd->add_option("--d-ff", f.d_ff, "mlp hidden width");
  cmd->add_option("--max-seq-len", f.max_seq_len, "sequence truncation bound");

  cmd->add_option("--steps", f.steps, "training steps");
  cmd->add_option("--batch-size", f.batch_size, "training batch size");
  cmd->add_option("--lr", f.lr, "learning rate");

  cmd->add_option("--factor-samples", f.factor_samples, "examples sampled for curvature");
  cmd->add_option("--factor-positions", f.factor_positions, "token positions kept per example");
  cmd->add_option("--damping-scale", f.damping_scale, "damping = scale * mean(Lambda)");

  cmd->add_option("--n", f.query_n, "query set size (the correct-answer set)");
  cmd->add_flag("--no-sequence", f.no_sequence, "skip span scores");
  cmd->add_flag("--no-token", f.no_token, "skip token scores");

  cmd->add_option("--math-easy", f.math_easy, "flip: max difficulty counted as easy math");
  cmd->add_option("--code-hard", f.code_hard, "flip: min difficulty counted as hard code");
  cmd->add_flag("--flip-reverse", f.flip_reverse, "flip control mode (swap the roles)");

  cmd->add_option("--top-fraction", f.top_fraction, "highlighted token fraction");
  cmd->add_option("--heatmap-examples", f.heatmap_examples, "heatmap documents to render");
}

RunConfig build_config(const CLI::App* cmd, const Flags& f) {
  RunConfig cfg;
  if (cmd->count("--config")) cfg = load_run_config(f.config);
  if (cmd->count("--dataset")) cfg.dataset_path = f.dataset;
  if (cmd->count("--eval")) cfg.eval_path = f.eval;
  if (cmd->count("--pool")) cfg.pool_path = f.pool;
  if (cmd->count("--out")) cfg.out_dir = f.out;
  if (cmd->count("--seed")) cfg.seed = f.seed;
  if (cmd->count("--workers")) cfg.workers = f.workers;

  if (cmd->count("--d-model")) cfg.model.d_model = f.d_model;
  if (cmd->count("--layers")) cfg.model.n_layers = f.n_layers;
  if (cmd->count("--heads")) cfg.model.n_heads = f.n_heads;
  if (cmd->count("--d-ff")) cfg.model.d_ff = f.d_ff;
  if (cmd->count("--max-seq-len")) cfg.model.max_seq_len = f.max_seq_len;

  if (cmd->count("--steps")) cfg.train.steps = f.steps;
  if (cmd->count("--batch-size")) cfg.train.batch_size = f.batch_size;
  if (cmd->count("--lr")) cfg.train.lr = f.lr;

  if (cmd->count("--factor-samples")) cfg.factors.sample_count = f.factor_samples;
  if (cmd->count("--factor-positions")) cfg.factors.positions_per_example = f.factor_positions;
  if (cmd->count("--damping-scale")) cfg.factors.damping_scale = f.damping_scale;

  if (cmd->count("--n")) cfg.query_n = f.query_n;
  if (cmd->count("--no-sequence")) cfg.targets.sequence = false;
  if (cmd->count("--no-token")) cfg.targets.token = false;

  if (cmd->count("--math-easy")) cfg.analysis.math_easy_threshold = f.math_easy;
  if (cmd->count("--code-hard")) cfg.analysis.code_hard_threshold = f.code_hard;
  if (cmd->count("--flip-reverse")) cfg.analysis.flip_reverse = f.flip_reverse;

  if (cmd->count("--top-fraction")) cfg.report.top_fraction = f.top_fraction;
  if (cmd->count("--heatmap-examples")) cfg.report.heatmap_examples = f.heatmap_examples;

  if (cfg.out_dir.empty()) {
    if (const char* env = std::getenv("TDA_OUTPUT_ROOT")) {
      cfg.out_dir = env;
    } else {
      cfg.out_dir = "tda_out";
    }
  }
  return cfg;
}

void print_outcomes(const PipelineResult& result) {
  for (const char* name : kStageOrder) {
    const auto it = result.stages.find(name);
    if (it == result.stages.end()) continue;
    std::cout << name << ": " << (it->second.ran ? "ran" : "cache hit") << "\n";
  }
  std::cout << "artifacts in " << result.out_dir.string() << "\n";
}

int cmd_flip(const RunConfig& cfg) {
  if (cfg.pool_path.empty()) {
    throw std::invalid_argument("flip: a replacement pool is required (--pool)");
  }
  cfg.validate();
  const Tokenizer tok(static_cast<std::size_t>(cfg.model.max_seq_len));
  const auto ds = ingest_dataset(cfg.dataset_path, tok);
  const auto pool = ingest_dataset(cfg.pool_path, tok);
  const ReweightPlan plan =
      difficulty_flip(ds, pool, cfg.analysis.math_easy_threshold,
                      cfg.analysis.code_hard_threshold, Rng::mix(cfg.seed, 6),
                      cfg.analysis.flip_reverse);

  std::filesystem::create_directories(cfg.out_dir);
  {
    std::ofstream out(cfg.out_dir / "flip_plan.json", std::ios::binary);
    out << plan_to_json(plan) << "\n";
  }
  write_dataset(cfg.out_dir / "flipped_dataset.jsonl", apply_plan(ds, pool, plan), tok);
  {
    std::ofstream out(cfg.out_dir / "flip_diff.txt", std::ios::binary);
    out << plan_diff_summary(plan);
  }
  std::cout << plan_diff_summary(plan);
  return 0;
}

int cmd_oracle(const RunConfig& cfg, int n, int dim, double l2) {
  using namespace tda::oracle;
  ConvexProxySpec spec;
  spec.model = ProxyModel::logistic_regression;
  spec.dim = dim;
  spec.l2 = l2;
  Rng rng(cfg.seed == 0 ? 47 : cfg.seed);
  Eigen::VectorXd w(dim);
  for (int c = 0; c < dim; ++c) w(c) = rng.normal() * 0.8;
  const auto draw = [&](std::vector<ProxyPoint>& dst, int count) {
    for (int i = 0; i < count; ++i) {
      Eigen::VectorXd x(dim);
      for (int c = 0; c < dim; ++c) x(c) = rng.normal();
      const double p = 1.0 / (1.0 + std::exp(-w.dot(x)));
      dst.push_back({x, rng.uniform() < p ? 1.0 : 0.0});
    }
  };
  draw(spec.data, n);
  draw(spec.query, std::max(8, n / 8));

  const double eps = -1.0 / static_cast<double>(spec.data.size());
  const auto influence = dense_influence_all(spec);
  const auto loo = loo_retrain_oracle(spec);
  const AgreementStats stats = compare_influence_to_loo(influence, loo, eps);

  const nlohmann::json spec_json = {{"model", "logistic_regression"},
                                    {"n", n},
                                    {"dim", dim},
                                    {"l2", l2},
                                    {"seed", cfg.seed}};
  nlohmann::json out = {{"spec", spec_json},
                        {"spec_hash", sha256_hex(spec_json.dump())},
                        {"eps", eps},
                        {"pearson", stats.pearson},
                        {"spearman", stats.spearman},
                        {"sign_agreement", stats.sign_agreement},
                        {"compared", stats.used}};

  std::filesystem::create_directories(cfg.out_dir);
  std::ofstream f(cfg.out_dir / "oracle_report.json", std::ios::binary);
  f << out.dump(2) << "\n";

  std::cout << "leave-one-out validation (logistic, n=" << n << ", d=" << dim << ", l2=" << l2
            << ")\n"
            << "  pearson        " << stats.pearson << "\n"
            << "  spearman       " << stats.spearman << "\n"
            << "  sign agreement " << stats.sign_agreement << " over " << stats.used
            << " examples\n"
            << "report: " << (cfg.out_dir / "oracle_report.json").string() << "\n";
  return stats.spearman >= 0.90 && stats.sign_agreement >= 0.90 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"influence-based training-data attribution for a tiny byte-level LM"};
  app.require_subcommand(1);

  Flags flags;
  std::map<std::string, CLI::App*> stage_cmds;
  for (const char* stage : kStageOrder) {
    CLI::App* cmd = app.add_subcommand(stage, std::string("run the ") + stage + " stage");
    add_common(cmd, flags);
    stage_cmds[stage] = cmd;
  }
  CLI::App* run_cmd = app.add_subcommand("run", "run the full pipeline with caching");
  add_common(run_cmd, flags);

  CLI::App* flip_cmd = app.add_subcommand("flip", "emit a difficulty-flip plan and dataset");
  add_common(flip_cmd, flags);

  CLI::App* oracle_cmd =
      app.add_subcommand("oracle", "validate influence against leave-one-out retraining");
  add_common(oracle_cmd, flags);
  int oracle_n = 200, oracle_dim = 10;
  double oracle_l2 = 1e-2;
  oracle_cmd->add_option("--oracle-n", oracle_n, "proxy dataset size");
  oracle_cmd->add_option("--oracle-dim", oracle_dim, "proxy feature dimension");
  oracle_cmd->add_option("--oracle-l2", oracle_l2, "proxy L2 strength");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run_cmd->parsed()) {
      print_outcomes(run_pipeline(build_config(run_cmd, flags)));
      return 0;
    }
    if (flip_cmd->parsed()) {
      return cmd_flip(build_config(flip_cmd, flags));
    }
    if (oracle_cmd->parsed()) {
      return cmd_oracle(build_config(oracle_cmd, flags), oracle_n, oracle_dim, oracle_l2);
    }
    for (const auto& [name, cmd] : stage_cmds) {
      if (cmd->parsed()) {
        print_outcomes(run_single_stage(build_config(cmd, flags), name));
        return 0;
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
