#include "tda/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <functional>
#include <iostream>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "tda/gradients.hpp"
#include "tda/hash.hpp"
#include "tda/rng.hpp"

namespace tda {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json model_to_json(const ModelConfig& m) {
  return {{"vocab_size", m.vocab_size}, {"d_model", m.d_model}, {"n_layers", m.n_layers},
          {"n_heads", m.n_heads},       {"d_ff", m.d_ff},       {"max_seq_len", m.max_seq_len}};
}

ModelConfig model_from_json(const json& j, ModelConfig base) {
  if (j.contains("vocab_size")) base.vocab_size = j.at("vocab_size").get<int>();
  if (j.contains("d_model")) base.d_model = j.at("d_model").get<int>();
  if (j.contains("n_layers")) base.n_layers = j.at("n_layers").get<int>();
  if (j.contains("n_heads")) base.n_heads = j.at("n_heads").get<int>();
  if (j.contains("d_ff")) base.d_ff = j.at("d_ff").get<int>();
  if (j.contains("max_seq_len")) base.max_seq_len = j.at("max_seq_len").get<int>();
  return base;
}

json train_to_json(const TrainConfig& t) {
  return {{"steps", t.steps},   {"batch_size", t.batch_size}, {"lr", t.lr},
          {"beta1", t.beta1},   {"beta2", t.beta2},           {"adam_eps", t.adam_eps},
          {"lr_decay", t.lr_decay}};
}

TrainConfig train_from_json(const json& j, TrainConfig base) {
  if (j.contains("steps")) base.steps = j.at("steps").get<int>();
  if (j.contains("batch_size")) base.batch_size = j.at("batch_size").get<int>();
  if (j.contains("lr")) base.lr = j.at("lr").get<double>();
  if (j.contains("beta1")) base.beta1 = j.at("beta1").get<double>();
  if (j.contains("beta2")) base.beta2 = j.at("beta2").get<double>();
  if (j.contains("adam_eps")) base.adam_eps = j.at("adam_eps").get<double>();
  if (j.contains("lr_decay")) base.lr_decay = j.at("lr_decay").get<bool>();
  return base;
}

json factors_to_json(const FactorOptions& f) {
  return {{"sample_count", f.sample_count},
          {"positions_per_example", f.positions_per_example},
          {"damping_scale", f.damping_scale},
          {"damping_floor", f.damping_floor}};
}

FactorOptions factors_from_json(const json& j, FactorOptions base) {
  if (j.contains("sample_count")) base.sample_count = j.at("sample_count").get<std::size_t>();
  if (j.contains("positions_per_example")) {
    base.positions_per_example = j.at("positions_per_example").get<std::size_t>();
  }
  if (j.contains("damping_scale")) base.damping_scale = j.at("damping_scale").get<double>();
  if (j.contains("damping_floor")) base.damping_floor = j.at("damping_floor").get<double>();
  return base;
}

json targets_to_json(const ScoreTargets& t) {
  return {{"instance", t.instance}, {"sequence", t.sequence}, {"token", t.token}};
}

json analysis_to_json(const AnalysisOptions& a) {
  json keys = json::array();
  for (auto k : a.group_keys) keys.push_back(to_string(k));
  return {{"group_keys", keys},
          {"math_easy_threshold", a.math_easy_threshold},
          {"code_hard_threshold", a.code_hard_threshold},
          {"flip_reverse", a.flip_reverse},
          {"robustness_ns", a.robustness_ns},
          {"positive_only", a.positive_only},
          {"ranking_top_k", a.ranking_top_k}};
}

json report_to_json(const ReportOptions& r) {
  return {{"top_fraction", r.top_fraction}, {"heatmap_examples", r.heatmap_examples}};
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  if (query_n < 1) throw std::invalid_argument("config: query n must be >= 1");
  for (int n : analysis.robustness_ns) {
    if (n < 1 || static_cast<std::size_t>(n) > query_n) {
      throw std::invalid_argument("config: robustness n values must lie in [1, query_n]");
    }
  }
  if (workers < 1) throw std::invalid_argument("config: workers must be >= 1");
  if (!(report.top_fraction > 0.0) || report.top_fraction > 1.0) {
    throw std::invalid_argument("config: top_fraction must be in (0, 1]");
  }
  if (!fs::exists(dataset_path)) {
    throw std::invalid_argument("config: dataset path does not exist: " + dataset_path.string());
  }
  if (!eval_path.empty() && !fs::exists(eval_path)) {
    throw std::invalid_argument("config: eval path does not exist: " + eval_path.string());
  }
  if (!pool_path.empty() && !fs::exists(pool_path)) {
    throw std::invalid_argument("config: pool path does not exist: " + pool_path.string());
  }
}

json RunConfig::to_json() const {
  return {{"dataset", dataset_path.string()},
          {"eval", eval_path.string()},
          {"pool", pool_path.string()},
          {"out", out_dir.string()},
          {"model", model_to_json(model)},
          {"train", train_to_json(train)},
          {"factors", factors_to_json(factors)},
          {"query_n", query_n},
          {"targets", targets_to_json(targets)},
          {"analysis", analysis_to_json(analysis)},
          {"report", report_to_json(report)},
          {"seed", seed},
          {"workers", workers}};
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig cfg;
  if (j.contains("dataset")) cfg.dataset_path = j.at("dataset").get<std::string>();
  if (j.contains("eval")) cfg.eval_path = j.at("eval").get<std::string>();
  if (j.contains("pool")) cfg.pool_path = j.at("pool").get<std::string>();
  if (j.contains("out")) cfg.out_dir = j.at("out").get<std::string>();
  if (j.contains("model")) cfg.model = model_from_json(j.at("model"), cfg.model);
  if (j.contains("train")) cfg.train = train_from_json(j.at("train"), cfg.train);
  if (j.contains("factors")) cfg.factors = factors_from_json(j.at("factors"), cfg.factors);
  if (j.contains("query_n")) cfg.query_n = j.at("query_n").get<std::size_t>();
  if (j.contains("targets")) {
    const auto& t = j.at("targets");
    if (t.contains("instance")) cfg.targets.instance = t.at("instance").get<bool>();
    if (t.contains("sequence")) cfg.targets.sequence = t.at("sequence").get<bool>();
    if (t.contains("token")) cfg.targets.token = t.at("token").get<bool>();
  }
  if (j.contains("analysis")) {
    const auto& a = j.at("analysis");
    if (a.contains("group_keys")) {
      cfg.analysis.group_keys.clear();
      for (const auto& k : a.at("group_keys")) {
        cfg.analysis.group_keys.push_back(group_key_from_string(k.get<std::string>()));
      }
    }
    if (a.contains("math_easy_threshold")) {
      cfg.analysis.math_easy_threshold = a.at("math_easy_threshold").get<int>();
    }
    if (a.contains("code_hard_threshold")) {
      cfg.analysis.code_hard_threshold = a.at("code_hard_threshold").get<int>();
    }
    if (a.contains("flip_reverse")) cfg.analysis.flip_reverse = a.at("flip_reverse").get<bool>();
    if (a.contains("robustness_ns")) {
      cfg.analysis.robustness_ns = a.at("robustness_ns").get<std::vector<int>>();
    }
    if (a.contains("positive_only")) {
      cfg.analysis.positive_only = a.at("positive_only").get<bool>();
    }
    if (a.contains("ranking_top_k")) {
      cfg.analysis.ranking_top_k = a.at("ranking_top_k").get<std::size_t>();
    }
  }
  if (j.contains("report")) {
    const auto& r = j.at("report");
    if (r.contains("top_fraction")) cfg.report.top_fraction = r.at("top_fraction").get<double>();
    if (r.contains("heatmap_examples")) {
      cfg.report.heatmap_examples = r.at("heatmap_examples").get<std::size_t>();
    }
  }
  if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("workers")) cfg.workers = j.at("workers").get<int>();
  return cfg;
}

std::string RunConfig::config_hash() const {
  json j = to_json();
  j.erase("dataset");
  j.erase("eval");
  j.erase("pool");
  j.erase("out");
  j.erase("workers");
  return sha256_hex(j.dump());
}

RunConfig load_run_config(const fs::path& config_file) {
  std::ifstream in(config_file);
  if (!in) throw std::runtime_error("cannot open config file: " + config_file.string());
  json j;
  in >> j;
  return RunConfig::from_json(j);
}

std::vector<EvalItem> load_eval_items(const fs::path& path, const Tokenizer& tok) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open eval set: " + path.string());
  std::vector<EvalItem> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      EvalItem item;
      item.prompt = tok.encode(j.at("prompt").get<std::string>());
      item.answer = tok.encode(j.at("answer").get<std::string>());
      if (item.answer.empty()) throw std::invalid_argument("empty answer");
      out.push_back(std::move(item));
    } catch (const std::exception& e) {
      throw std::runtime_error("eval set " + path.string() + " line " + std::to_string(line_no) +
                               ": " + e.what());
    }
  }
  return out;
}

void save_query_set(const fs::path& path, const QuerySet& qs, const Tokenizer& tok) {
  json items = json::array();
  for (const auto& item : qs.items) {
    items.push_back({{"answer", tok.decode(item.answer)}, {"prompt", tok.decode(item.prompt)}});
  }
  const json j = {{"id", qs.id}, {"items", items}, {"n", qs.items.size()}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write query set: " + path.string());
  out << j.dump(2) << "\n";
}

QuerySet load_query_set(const fs::path& path, const Tokenizer& tok) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open query set: " + path.string());
  json j;
  in >> j;
  QuerySet qs;
  qs.id = j.at("id").get<std::string>();
  for (const auto& item : j.at("items")) {
    qs.items.push_back({tok.encode(item.at("prompt").get<std::string>()),
                        tok.encode(item.at("answer").get<std::string>())});
  }
  return qs;
}

namespace {

// Parallel scoring. Per-example work is independent and the output is keyed
// by example id, so the worker count never changes the result bytes.
std::vector<InfluenceRecord> score_all(const Model& model, const PreconditionedQuery& pq,
                                       const std::vector<Example>& ds,
                                       const ScoreTargets& targets, int workers) {
  std::vector<InfluenceRecord> records(ds.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;

  const auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= ds.size()) return;
      try {
        records[i] = score_example(model, pq, ds[i], targets);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mu);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };

  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  std::sort(records.begin(), records.end(),
            [](const InfluenceRecord& a, const InfluenceRecord& b) {
              return a.example_id < b.example_id;
            });
  return records;
}

struct StageDef {
  std::string name;
  std::function<std::string()> key;
  std::function<std::vector<fs::path>()> produce;  // paths relative to out_dir
};

std::string hash_artifact(const fs::path& p, const char* needed_by) {
  if (!fs::exists(p)) {
    throw std::runtime_error(std::string("missing artifact ") + p.filename().string() +
                             " (run the upstream stage before '" + needed_by + "')");
  }
  return sha256_file(p);
}

std::vector<StageDef> make_stages(const RunConfig& cfg) {
  const fs::path out = cfg.out_dir;
  const fs::path ckpt = out / "checkpoint.bin";
  const fs::path curv = out / "curvature.bin";
  const fs::path qset = out / "queryset.json";
  const fs::path scores = out / "scores.jsonl";
  const fs::path analysis = out / "analysis.json";

  const auto tokenizer = [cfg] {
    return Tokenizer(static_cast<std::size_t>(cfg.model.max_seq_len));
  };

  std::vector<StageDef> stages;

  stages.push_back(StageDef{
      "train",
      [=] {
        return Hasher()
            .add("train.v1")
            .add(sha256_file(cfg.dataset_path))
            .add(model_to_json(cfg.model).dump())
            .add(train_to_json(cfg.train).dump())
            .add_u64(cfg.seed)
            .hex();
      },
      [=] {
        const Tokenizer tok = tokenizer();
        const auto ds = ingest_dataset(cfg.dataset_path, tok);
        Model model(cfg.model, Rng::mix(cfg.seed, 1));
        TrainConfig tc = cfg.train;
        tc.seed = Rng::mix(cfg.seed, 2);
        const TrainStats stats = train(model, ds, tc);
        std::cerr << "train: loss " << stats.initial_loss << " -> " << stats.final_loss
                  << " over " << stats.steps_run << " steps\n";
        model.save_checkpoint(ckpt);
        return std::vector<fs::path>{"checkpoint.bin"};
      }});

  stages.push_back(StageDef{
      "factors",
      [=] {
        return Hasher()
            .add("factors.v1")
            .add(hash_artifact(ckpt, "factors"))
            .add(sha256_file(cfg.dataset_path))
            .add(factors_to_json(cfg.factors).dump())
            .add_u64(cfg.seed)
            .hex();
      },
      [=] {
        const Model model = Model::load_checkpoint(ckpt);
        const Tokenizer tok = tokenizer();
        const auto ds = ingest_dataset(cfg.dataset_path, tok);
        FactorOptions opts = cfg.factors;
        opts.seed = Rng::mix(cfg.seed, 3);
        const CurvatureModel curvature = estimate_curvature(model, ds, opts);
        save_curvature(curv, curvature);
        return std::vector<fs::path>{"curvature.bin"};
      }});

  stages.push_back(StageDef{
      "query",
      [=] {
        return Hasher()
            .add("query.v1")
            .add(hash_artifact(ckpt, "query"))
            .add(sha256_file(cfg.eval_path))
            .add_u64(cfg.query_n)
            .add_u64(cfg.seed)
            .hex();
      },
      [=] {
        const Model model = Model::load_checkpoint(ckpt);
        const Tokenizer tok = tokenizer();
        const auto evalset = load_eval_items(cfg.eval_path, tok);
        bool short_of_n = false;
        const QuerySet qs =
            evaluate_correct(model, evalset, cfg.query_n, Rng::mix(cfg.seed, 4), &short_of_n);
        if (short_of_n) {
          std::cerr << "query: warning: only " << qs.n() << " correct items available (asked for "
                    << cfg.query_n << ")\n";
        }
        save_query_set(qset, qs, tok);
        return std::vector<fs::path>{"queryset.json"};
      }});

  stages.push_back(StageDef{
      "score",
      [=] {
        return Hasher()
            .add("score.v1")
            .add(hash_artifact(ckpt, "score"))
            .add(hash_artifact(curv, "score"))
            .add(hash_artifact(qset, "score"))
            .add(sha256_file(cfg.dataset_path))
            .add(targets_to_json(cfg.targets).dump())
            .hex();
      },
      [=] {
        const Model model = Model::load_checkpoint(ckpt);
        const CurvatureModel curvature = load_curvature(curv);
        const Tokenizer tok = tokenizer();
        const QuerySet qs = load_query_set(qset, tok);
        const auto ds = ingest_dataset(cfg.dataset_path, tok);
        const PreconditionedQuery pq = precondition_query(model, curvature, qs);
        const auto records = score_all(model, pq, ds, cfg.targets, cfg.workers);
        write_score_file(scores, records);
        return std::vector<fs::path>{"scores.jsonl"};
      }});

  stages.push_back(StageDef{
      "analyze",
      [=] {
        return Hasher()
            .add("analyze.v1")
            .add(hash_artifact(scores, "analyze"))
            .add(sha256_file(cfg.dataset_path))
            .add(cfg.pool_path.empty() ? std::string("-") : sha256_file(cfg.pool_path))
            .add(hash_artifact(ckpt, "analyze"))
            .add(hash_artifact(curv, "analyze"))
            .add(hash_artifact(qset, "analyze"))
            .add(analysis_to_json(cfg.analysis).dump())
            .add_u64(cfg.query_n)
            .add_u64(cfg.seed)
            .hex();
      },
      [=] {
        const Tokenizer tok = tokenizer();
        const auto records = read_score_file(scores);
        const auto ds = ingest_dataset(cfg.dataset_path, tok);
        const Model model = Model::load_checkpoint(ckpt);
        const CurvatureModel curvature = load_curvature(curv);
        const QuerySet qs = load_query_set(qset, tok);

        json out_json;
        out_json["ids"] = {{"checkpoint", model.content_hash()},
                           {"curvature", hash_artifact(curv, "analyze")},
                           {"query_set", qs.id},
                           {"config", cfg.config_hash()}};

        const auto ranked = rank_examples(records, cfg.analysis.positive_only);
        json top = json::array();
        for (std::size_t i = 0; i < std::min(cfg.analysis.ranking_top_k, ranked.size()); ++i) {
          top.push_back({ranked[i].first, ranked[i].second});
        }
        out_json["rankings"] = {{"positive_count", ranked.size()}, {"top", top}};

        json groups;
        for (GroupKey key : cfg.analysis.group_keys) {
          json arr = json::array();
          for (const auto& g : aggregate_by(records, ds, key)) {
            arr.push_back({{"count", g.count},
                           {"key", g.key},
                           {"mean", g.mean},
                           {"std_error", g.std_error}});
          }
          groups[to_string(key)] = arr;
        }
        out_json["groups"] = groups;

        const auto behavior = aggregate_behavior_influence(records, ds);
        json beh = json::array();
        for (const auto& g : behavior) {
          beh.push_back(
              {{"count", g.count}, {"key", g.key}, {"mean", g.mean}, {"std_error", g.std_error}});
        }
        out_json["behavior"] = beh;
        if (behavior.empty()) {
          out_json["behavior_warning"] = "no annotated spans in the scored records";
          std::cerr << "analyze: warning: no annotated spans; behavior table is empty\n";
        }

        // robustness in n: nested prefixes of one seeded permutation of the
        // query items; reference is the full configured n
        {
          std::vector<QueryItem> permuted = qs.items;
          Rng rng(Rng::mix(cfg.seed, 5));
          rng.shuffle(permuted);

          std::vector<int> ns = cfg.analysis.robustness_ns;
          const int reference_n = static_cast<int>(cfg.query_n);
          if (std::find(ns.begin(), ns.end(), reference_n) == ns.end()) {
            ns.push_back(reference_n);
          }
          std::map<int, GradVector> preconditioned;
          for (int n : ns) {
            QuerySet sub;
            const std::size_t take =
                std::min<std::size_t>(static_cast<std::size_t>(n), permuted.size());
            sub.items.assign(permuted.begin(),
                             permuted.begin() + static_cast<std::ptrdiff_t>(take));
            sub.id = query_set_content_id(sub);
            preconditioned.emplace(n, ihvp(curvature, model.view(), query_grad(model, sub)));
          }
          std::map<int, std::vector<InfluenceRecord>> by_n;
          for (const auto& ex : ds) {
            const GradVector g = example_grad(model, ex);
            for (const auto& [n, q] : preconditioned) {
              InfluenceRecord rec;
              rec.example_id = ex.id;
              rec.instance_score = -dot(q, g);
              rec.query_set_id = "robustness";
              rec.checkpoint_hash = model.content_hash();
              by_n[n].push_back(std::move(rec));
            }
          }
          const auto corr = rank_correlation(by_n, reference_n);
          json rj;
          for (const auto& [n, c] : corr) rj[std::to_string(n)] = c;
          out_json["robustness"] = rj;
        }

        std::vector<fs::path> written{"analysis.json"};
        if (!cfg.pool_path.empty()) {
          const auto pool = ingest_dataset(cfg.pool_path, tok);
          const ReweightPlan plan =
              difficulty_flip(ds, pool, cfg.analysis.math_easy_threshold,
                              cfg.analysis.code_hard_threshold, Rng::mix(cfg.seed, 6),
                              cfg.analysis.flip_reverse);
          out_json["flip"] = json::parse(plan_to_json(plan));
          const auto flipped = apply_plan(ds, pool, plan);
          write_dataset(out / "flipped_dataset.jsonl", flipped, tok);
          std::ofstream diff(out / "flip_diff.txt", std::ios::binary);
          diff << plan_diff_summary(plan);
          written.emplace_back("flipped_dataset.jsonl");
          written.emplace_back("flip_diff.txt");
        } else {
          out_json["flip"] = nullptr;
        }

        std::ofstream af(analysis, std::ios::binary);
        if (!af) throw std::runtime_error("cannot write analysis.json");
        af << out_json.dump(2) << "\n";
        return written;
      }});

  stages.push_back(StageDef{
      "report",
      [=] {
        return Hasher()
            .add("report.v1")
            .add(hash_artifact(scores, "report"))
            .add(sha256_file(cfg.dataset_path))
            .add(hash_artifact(analysis, "report"))
            .add(report_to_json(cfg.report).dump())
            .hex();
      },
      [=] {
        const Tokenizer tok = tokenizer();
        const auto records = read_score_file(scores);
        const auto ds = ingest_dataset(cfg.dataset_path, tok);
        std::ifstream af(analysis);
        json aj;
        af >> aj;
        return emit_report(records, ds, cfg.report, aj, out);
      }});

  return stages;
}

class StageEngine {
 public:
  explicit StageEngine(fs::path out_dir) : out_dir_(std::move(out_dir)) {
    fs::create_directories(out_dir_);
    const fs::path mpath = out_dir_ / "manifest.json";
    if (fs::exists(mpath)) {
      std::ifstream in(mpath);
      in >> manifest_;
    }
    if (!manifest_.contains("version")) manifest_["version"] = 1;
    if (!manifest_.contains("stages")) manifest_["stages"] = json::object();
  }

  bool cache_valid(const std::string& name, const std::string& key) const {
    const auto& stages = manifest_.at("stages");
    if (!stages.contains(name)) return false;
    const auto& entry = stages.at(name);
    if (entry.at("key").get<std::string>() != key) return false;
    for (const auto& [rel, hash] : entry.at("outputs").items()) {
      const fs::path p = out_dir_ / rel;
      if (!fs::exists(p) || sha256_file(p) != hash.get<std::string>()) return false;
    }
    return true;
  }

  StageOutcome run(const StageDef& def, bool force) {
    StageOutcome outcome;
    outcome.key = def.key();
    if (!force && !upstream_ran_ && cache_valid(def.name, outcome.key)) {
      return outcome;
    }
    std::vector<fs::path> outputs;
    try {
      outputs = def.produce();
    } catch (const std::exception& e) {
      throw std::runtime_error("stage '" + def.name + "' failed: " + e.what());
    }
    json out_hashes = json::object();
    for (const auto& rel : outputs) {
      out_hashes[rel.generic_string()] = sha256_file(out_dir_ / rel);
    }
    manifest_["stages"][def.name] = {{"key", outcome.key}, {"outputs", out_hashes}};
    outcome.ran = true;
    upstream_ran_ = true;
    return outcome;
  }

  void save() const {
    std::ofstream out(out_dir_ / "manifest.json", std::ios::binary);
    if (!out) throw std::runtime_error("cannot write manifest.json");
    out << manifest_.dump(2) << "\n";
  }

 private:
  fs::path out_dir_;
  json manifest_;
  bool upstream_ran_ = false;
};

}  // namespace

PipelineResult run_pipeline(const RunConfig& cfg, const std::vector<std::string>& force) {
  cfg.validate();
  if (cfg.eval_path.empty()) {
    throw std::invalid_argument("config: the pipeline needs an eval set (--eval)");
  }
  StageEngine engine(cfg.out_dir);
  PipelineResult result;
  result.out_dir = cfg.out_dir;
  for (const auto& def : make_stages(cfg)) {
    const bool forced = std::find(force.begin(), force.end(), def.name) != force.end();
    result.stages[def.name] = engine.run(def, forced);
  }
  engine.save();
  return result;
}

PipelineResult run_single_stage(const RunConfig& cfg, const std::string& stage) {
  cfg.validate();
  StageEngine engine(cfg.out_dir);
  PipelineResult result;
  result.out_dir = cfg.out_dir;
  for (const auto& def : make_stages(cfg)) {
    if (def.name != stage) continue;
    result.stages[def.name] = engine.run(def, /*force=*/true);
    engine.save();
    return result;
  }
  throw std::invalid_argument("unknown stage: " + stage);
}

}  // namespace tda
