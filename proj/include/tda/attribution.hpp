#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tda/dataset.hpp"
#include "tda/influence.hpp"

namespace tda {

struct GroupStats {
  std::string key;
  std::size_t count = 0;
  double mean = 0.0;
  double std_error = 0.0;  // sample stddev / sqrt(count); 0 for a single member
};

// Descending by score, ties by id; positive_only drops scores <= 0.
// All records must share one query-set id.
std::vector<std::pair<std::string, double>> rank_examples(
    const std::vector<InfluenceRecord>& records, bool positive_only);

enum class GroupKey { domain, category, difficulty };

GroupKey group_key_from_string(const std::string& s);
std::string to_string(GroupKey k);

// Mean instance score and standard error per group; records whose example
// lacks the key are omitted, as are empty groups.
std::vector<GroupStats> aggregate_by(const std::vector<InfluenceRecord>& records,
                                     const std::vector<Example>& dataset, GroupKey key);

// Mean span score per behavior label across all annotated spans. Returns an
// empty list when no record carries span scores (callers warn).
std::vector<GroupStats> aggregate_behavior_influence(const std::vector<InfluenceRecord>& records,
                                                     const std::vector<Example>& dataset);

// Pearson coefficient between the instance-score vectors at each n and at
// reference_n; every record set must cover the same example ids.
std::map<int, double> rank_correlation(
    const std::map<int, std::vector<InfluenceRecord>>& records_by_n, int reference_n);

double pearson(const std::vector<double>& a, const std::vector<double>& b);

struct ReweightShortfall {
  std::string description;
  std::size_t wanted = 0;
  std::size_t available = 0;
};

struct ReweightPlan {
  std::vector<std::string> removals;   // ids in dataset
  std::vector<std::string> additions;  // ids in pool
  // resulting per-(domain, difficulty) counts; difficulty 0 = unannotated
  std::map<std::pair<std::string, int>, std::size_t> histogram;
  std::vector<ReweightShortfall> shortfalls;
  bool reverse = false;
};

// Difficulty-flip planner: replace easy math (difficulty <= math_easy_threshold)
// with harder pool math (highest difficulty first) and hard code
// (difficulty >= code_hard_threshold) with easier pool code (lowest first).
// Size is always preserved: when the pool runs short, removals are capped to
// the available replacements and the shortfall is reported. The reverse flag
// swaps the roles (simplify math, harden code), the paper's control setting.
ReweightPlan difficulty_flip(const std::vector<Example>& dataset,
                             const std::vector<Example>& pool, int math_easy_threshold,
                             int code_hard_threshold, std::uint64_t seed = 0,
                             bool reverse = false);

// Materialize the plan: dataset minus removals plus the pool additions.
std::vector<Example> apply_plan(const std::vector<Example>& dataset,
                                const std::vector<Example>& pool, const ReweightPlan& plan);

std::string plan_to_json(const ReweightPlan& plan);
std::string plan_diff_summary(const ReweightPlan& plan);

}  // namespace tda
