#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tda/ekfac.hpp"
#include "tda/gradients.hpp"
#include "tda/model.hpp"

namespace tda {

// The reusable H^-1 grad-f factor: computed once per query set and shared
// across every example that gets scored against it.
struct PreconditionedQuery {
  GradVector q;
  std::string query_set_id;
  std::string checkpoint_hash;
};

struct SpanScore {
  Behavior label;
  std::size_t begin = 0;
  std::size_t end = 0;
  double score = 0.0;
};

struct InfluenceRecord {
  std::string example_id;
  double instance_score = 0.0;
  std::optional<std::vector<double>> token_scores;  // length == response length
  std::vector<SpanScore> span_scores;
  std::string query_set_id;
  std::string checkpoint_hash;
};

PreconditionedQuery precondition_query(const Model& model, const CurvatureModel& curv,
                                       const QuerySet& queries);

// Positive score predicts that upweighting the example increases the query
// objective. An example with an empty response contributes a zero gradient
// and scores zero.
double instance_influence(const Model& model, const PreconditionedQuery& pq, const Example& ex);

enum class SpanRemoval { erase, mask };

// Counterfactual span contribution: instance score of the example minus the
// instance score with the span removed from the response. `erase` deletes
// the tokens and re-evaluates the shortened response; `mask` keeps the
// tokens as input but drops their loss terms.
double sequence_influence(const Model& model, const PreconditionedQuery& pq, const Example& ex,
                          std::size_t begin, std::size_t end,
                          SpanRemoval mode = SpanRemoval::erase);

// Per-response-token scores; sums to the instance score.
std::vector<double> token_influence(const Model& model, const PreconditionedQuery& pq,
                                    const Example& ex);

// Indices of the ceil(fraction * T) highest-scoring tokens, highest first,
// ties broken by lower index.
std::vector<std::size_t> top_tokens(const InfluenceRecord& record, double fraction);

constexpr double kDefaultTopTokenFraction = 0.05;

struct ScoreTargets {
  bool instance = true;
  bool sequence = false;  // spans from Example::behavior_spans
  bool token = false;
};

InfluenceRecord score_example(const Model& model, const PreconditionedQuery& pq,
                              const Example& ex, const ScoreTargets& targets);

void write_score_file(const std::filesystem::path& path,
                      const std::vector<InfluenceRecord>& records);
std::vector<InfluenceRecord> read_score_file(const std::filesystem::path& path);

}  // namespace tda
