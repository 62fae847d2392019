#include "tda/influence.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "json.hpp"

namespace tda {

using nlohmann::json;

PreconditionedQuery precondition_query(const Model& model, const CurvatureModel& curv,
                                       const QuerySet& queries) {
  const std::string model_hash = model.content_hash();
  if (curv.checkpoint_hash != model_hash) {
    throw std::invalid_argument(
        "precondition_query: curvature was estimated on a different checkpoint");
  }
  PreconditionedQuery pq;
  pq.q = ihvp(curv, model.view(), query_grad(model, queries));
  pq.query_set_id = queries.id.empty() ? query_set_content_id(queries) : queries.id;
  pq.checkpoint_hash = model_hash;
  return pq;
}

double instance_influence(const Model& model, const PreconditionedQuery& pq, const Example& ex) {
  if (ex.response.empty()) return 0.0;  // empty response: zero gradient by convention
  return -dot(pq.q, example_grad(model, ex));
}

double sequence_influence(const Model& model, const PreconditionedQuery& pq, const Example& ex,
                          std::size_t begin, std::size_t end, SpanRemoval mode) {
  if (begin > end || end > ex.response.size()) {
    throw std::invalid_argument("sequence_influence: invalid span bounds");
  }
  if (begin == end) return 0.0;

  const double full = instance_influence(model, pq, ex);

  double removed = 0.0;
  if (mode == SpanRemoval::erase) {
    Example cut = ex;
    cut.response.erase(cut.response.begin() + static_cast<std::ptrdiff_t>(begin),
                       cut.response.begin() + static_cast<std::ptrdiff_t>(end));
    cut.behavior_spans.clear();
    removed = instance_influence(model, pq, cut);
  } else {
    const bool all_masked = begin == 0 && end == ex.response.size();
    if (!all_masked) {
      const GradVector g = example_grad_masked(
          model, ex, [&](std::size_t t) { return t < begin || t >= end; });
      removed = -dot(pq.q, g);
    }
  }
  return full - removed;
}

std::vector<double> token_influence(const Model& model, const PreconditionedQuery& pq,
                                    const Example& ex) {
  if (ex.response.empty()) throw std::invalid_argument("token_influence: empty response");
  const std::vector<GradVector> grads = token_grads(model, ex);
  std::vector<double> out;
  out.reserve(grads.size());
  for (const auto& g : grads) out.push_back(dot(pq.q, g));
  return out;
}

std::vector<std::size_t> top_tokens(const InfluenceRecord& record, double fraction) {
  if (!(fraction > 0.0) || fraction > 1.0) {
    throw std::invalid_argument("top_tokens: fraction must be in (0, 1]");
  }
  if (!record.token_scores) {
    throw std::invalid_argument("top_tokens: record has no token scores");
  }
  const auto& scores = *record.token_scores;
  const std::size_t T = scores.size();
  if (T == 0) return {};
  // round half up, at least one token
  const auto k = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::floor(fraction * static_cast<double>(T) + 0.5)));

  std::vector<std::size_t> idx(T);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  idx.resize(std::min(k, T));
  return idx;
}

InfluenceRecord score_example(const Model& model, const PreconditionedQuery& pq,
                              const Example& ex, const ScoreTargets& targets) {
  InfluenceRecord rec;
  rec.example_id = ex.id;
  rec.query_set_id = pq.query_set_id;
  rec.checkpoint_hash = pq.checkpoint_hash;
  rec.instance_score = instance_influence(model, pq, ex);

  if (targets.token && !ex.response.empty()) {
    rec.token_scores = token_influence(model, pq, ex);
    const double sum =
        std::accumulate(rec.token_scores->begin(), rec.token_scores->end(), 0.0);
    const double denom = std::max(std::abs(rec.instance_score), 1e-12);
    if (std::abs(sum - rec.instance_score) > 1e-6 * denom) {
      throw std::runtime_error("score_example: token scores do not sum to the instance score");
    }
  }
  if (targets.sequence) {
    for (const auto& span : ex.behavior_spans) {
      SpanScore ss;
      ss.label = span.label;
      ss.begin = span.begin;
      ss.end = span.end;
      ss.score = sequence_influence(model, pq, ex, span.begin, span.end);
      rec.span_scores.push_back(ss);
    }
  }
  return rec;
}

void write_score_file(const std::filesystem::path& path,
                      const std::vector<InfluenceRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write score file: " + path.string());
  for (const auto& rec : records) {
    json j;
    j["id"] = rec.example_id;
    j["instance"] = rec.instance_score;
    j["query_set"] = rec.query_set_id;
    j["checkpoint"] = rec.checkpoint_hash;
    if (rec.token_scores) j["tokens"] = *rec.token_scores;
    if (!rec.span_scores.empty()) {
      json spans = json::array();
      for (const auto& s : rec.span_scores) {
        spans.push_back({{"end", s.end},
                         {"label", to_string(s.label)},
                         {"score", s.score},
                         {"start", s.begin}});
      }
      j["spans"] = spans;
    }
    out << j.dump() << "\n";
  }
}

std::vector<InfluenceRecord> read_score_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open score file: " + path.string());
  std::vector<InfluenceRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    InfluenceRecord rec;
    rec.example_id = j.at("id").get<std::string>();
    rec.instance_score = j.at("instance").get<double>();
    rec.query_set_id = j.at("query_set").get<std::string>();
    rec.checkpoint_hash = j.at("checkpoint").get<std::string>();
    if (j.contains("tokens")) rec.token_scores = j.at("tokens").get<std::vector<double>>();
    if (j.contains("spans")) {
      for (const auto& js : j.at("spans")) {
        SpanScore s;
        s.label = behavior_from_string(js.at("label").get<std::string>());
        s.begin = js.at("start").get<std::size_t>();
        s.end = js.at("end").get<std::size_t>();
        s.score = js.at("score").get<double>();
        rec.span_scores.push_back(s);
      }
    }
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace tda
