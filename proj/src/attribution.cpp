#include "tda/attribution.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "tda/rng.hpp"

namespace tda {

using nlohmann::json;

std::vector<std::pair<std::string, double>> rank_examples(
    const std::vector<InfluenceRecord>& records, bool positive_only) {
  if (!records.empty()) {
    const std::string& qs = records.front().query_set_id;
    for (const auto& r : records) {
      if (r.query_set_id != qs) {
        throw std::invalid_argument("rank_examples: records span multiple query sets");
      }
    }
  }
  std::vector<std::pair<std::string, double>> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    if (positive_only && !(r.instance_score > 0.0)) continue;
    out.emplace_back(r.example_id, r.instance_score);
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  return out;
}

GroupKey group_key_from_string(const std::string& s) {
  if (s == "domain") return GroupKey::domain;
  if (s == "category") return GroupKey::category;
  if (s == "difficulty") return GroupKey::difficulty;
  throw std::invalid_argument("unknown group key: " + s);
}

std::string to_string(GroupKey k) {
  switch (k) {
    case GroupKey::domain: return "domain";
    case GroupKey::category: return "category";
    case GroupKey::difficulty: return "difficulty";
  }
  return "domain";
}

namespace {

std::vector<GroupStats> finalize_groups(const std::map<std::string, std::vector<double>>& groups) {
  std::vector<GroupStats> out;
  for (const auto& [key, vals] : groups) {
    GroupStats gs;
    gs.key = key;
    gs.count = vals.size();
    double sum = 0.0;
    for (double v : vals) sum += v;
    gs.mean = sum / static_cast<double>(vals.size());
    if (vals.size() > 1) {
      double ss = 0.0;
      for (double v : vals) ss += (v - gs.mean) * (v - gs.mean);
      gs.std_error = std::sqrt(ss / static_cast<double>(vals.size() - 1)) /
                     std::sqrt(static_cast<double>(vals.size()));
    }
    out.push_back(std::move(gs));
  }
  return out;
}

}  // namespace

std::vector<GroupStats> aggregate_by(const std::vector<InfluenceRecord>& records,
                                     const std::vector<Example>& dataset, GroupKey key) {
  const auto idx = index_by_id(dataset);
  std::map<std::string, std::vector<double>> groups;
  for (const auto& r : records) {
    const auto it = idx.find(r.example_id);
    if (it == idx.end()) {
      throw std::invalid_argument("aggregate_by: unknown example id " + r.example_id);
    }
    const Example& ex = *it->second;
    switch (key) {
      case GroupKey::domain:
        groups[to_string(ex.domain)].push_back(r.instance_score);
        break;
      case GroupKey::category:
        if (ex.category) groups[*ex.category].push_back(r.instance_score);
        break;
      case GroupKey::difficulty:
        if (ex.difficulty) groups[std::to_string(*ex.difficulty)].push_back(r.instance_score);
        break;
    }
  }
  return finalize_groups(groups);
}

std::vector<GroupStats> aggregate_behavior_influence(const std::vector<InfluenceRecord>& records,
                                                     const std::vector<Example>& dataset) {
  const auto idx = index_by_id(dataset);
  std::map<std::string, std::vector<double>> groups;
  for (const auto& r : records) {
    if (!r.span_scores.empty() && idx.find(r.example_id) == idx.end()) {
      throw std::invalid_argument("aggregate_behavior_influence: unknown example id " +
                                  r.example_id);
    }
    for (const auto& s : r.span_scores) groups[to_string(s.label)].push_back(s.score);
  }
  return finalize_groups(groups);
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.empty()) throw std::invalid_argument("pearson: size mismatch");
  const auto n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cov += (a[i] - ma) * (b[i] - mb);
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
  }
  if (va == 0.0 || vb == 0.0) {
    throw std::invalid_argument("pearson: zero-variance input");
  }
  return cov / std::sqrt(va * vb);
}

std::map<int, double> rank_correlation(
    const std::map<int, std::vector<InfluenceRecord>>& records_by_n, int reference_n) {
  const auto ref_it = records_by_n.find(reference_n);
  if (ref_it == records_by_n.end()) {
    throw std::invalid_argument("rank_correlation: reference n not present");
  }

  const auto score_map = [](const std::vector<InfluenceRecord>& recs) {
    std::map<std::string, double> m;
    for (const auto& r : recs) m[r.example_id] = r.instance_score;
    return m;
  };
  const auto ref = score_map(ref_it->second);

  std::map<int, double> out;
  for (const auto& [n, recs] : records_by_n) {
    const auto cur = score_map(recs);
    if (cur.size() != ref.size()) {
      throw std::invalid_argument("rank_correlation: example id sets differ");
    }
    std::vector<double> a, b;
    a.reserve(ref.size());
    b.reserve(ref.size());
    for (const auto& [id, ref_score] : ref) {
      const auto it = cur.find(id);
      if (it == cur.end()) {
        throw std::invalid_argument("rank_correlation: example id sets differ");
      }
      a.push_back(it->second);
      b.push_back(ref_score);
    }
    out[n] = n == reference_n ? 1.0 : pearson(a, b);
  }
  return out;
}

namespace {

// pool candidates grouped by difficulty tier, each tier seeded-shuffled then
// consumed in a deterministic order
std::vector<const Example*> pick_replacements(const std::vector<Example>& pool, Domain domain,
                                              const std::function<bool(int)>& eligible,
                                              bool extreme_high_first, std::size_t wanted,
                                              std::uint64_t seed,
                                              const std::set<std::string>& taken_ids) {
  std::map<int, std::vector<const Example*>> tiers;
  for (const auto& ex : pool) {
    if (ex.domain != domain || !ex.difficulty || !eligible(*ex.difficulty)) continue;
    if (taken_ids.count(ex.id)) continue;
    tiers[*ex.difficulty].push_back(&ex);
  }
  std::vector<int> order;
  for (const auto& [lvl, _] : tiers) order.push_back(lvl);
  std::sort(order.begin(), order.end());
  if (extreme_high_first) std::reverse(order.begin(), order.end());

  std::vector<const Example*> picked;
  for (int lvl : order) {
    auto& tier = tiers[lvl];
    std::sort(tier.begin(), tier.end(),
              [](const Example* a, const Example* b) { return a->id < b->id; });
    Rng rng(Rng::mix(seed, static_cast<std::uint64_t>(lvl)));
    rng.shuffle(tier);
    for (const Example* ex : tier) {
      if (picked.size() >= wanted) break;
      picked.push_back(ex);
    }
    if (picked.size() >= wanted) break;
  }
  return picked;
}

}  // namespace

ReweightPlan difficulty_flip(const std::vector<Example>& dataset,
                             const std::vector<Example>& pool, int math_easy_threshold,
                             int code_hard_threshold, std::uint64_t seed, bool reverse) {
  if (math_easy_threshold < 1 || math_easy_threshold > 5 || code_hard_threshold < 1 ||
      code_hard_threshold > 5) {
    throw std::invalid_argument("difficulty_flip: thresholds must be in [1,5]");
  }

  ReweightPlan plan;
  plan.reverse = reverse;

  std::set<std::string> dataset_ids;
  for (const auto& ex : dataset) dataset_ids.insert(ex.id);

  struct Rule {
    Domain domain;
    std::function<bool(int)> remove_if;
    std::function<bool(int)> add_if;
    bool remove_extreme_low_first;  // order removals start from this end
    bool add_high_first;
    std::string name;
  };

  std::vector<Rule> rules;
  if (!reverse) {
    rules.push_back({Domain::math, [=](int d) { return d <= math_easy_threshold; },
                     [=](int d) { return d > math_easy_threshold; }, true, true,
                     "easy math -> hard math"});
    rules.push_back({Domain::code, [=](int d) { return d >= code_hard_threshold; },
                     [=](int d) { return d < code_hard_threshold; }, false, false,
                     "hard code -> easy code"});
  } else {
    rules.push_back({Domain::math, [=](int d) { return d >= code_hard_threshold; },
                     [=](int d) { return d < code_hard_threshold; }, false, false,
                     "hard math -> easy math"});
    rules.push_back({Domain::code, [=](int d) { return d <= math_easy_threshold; },
                     [=](int d) { return d > math_easy_threshold; }, true, true,
                     "easy code -> hard code"});
  }

  std::set<std::string> added_ids;
  for (std::size_t ri = 0; ri < rules.size(); ++ri) {
    const auto& rule = rules[ri];
    std::vector<const Example*> to_remove;
    for (const auto& ex : dataset) {
      if (ex.domain == rule.domain && ex.difficulty && rule.remove_if(*ex.difficulty)) {
        to_remove.push_back(&ex);
      }
    }
    // most extreme difficulty first so a capped plan swaps the worst offenders
    std::sort(to_remove.begin(), to_remove.end(), [&](const Example* a, const Example* b) {
      if (*a->difficulty != *b->difficulty) {
        return rule.remove_extreme_low_first ? *a->difficulty < *b->difficulty
                                             : *a->difficulty > *b->difficulty;
      }
      return a->id < b->id;
    });

    const std::vector<const Example*> repl = pick_replacements(
        pool, rule.domain, rule.add_if, rule.add_high_first, to_remove.size(),
        Rng::mix(seed, ri), added_ids);

    if (repl.size() < to_remove.size()) {
      plan.shortfalls.push_back({rule.name, to_remove.size(), repl.size()});
      to_remove.resize(repl.size());
    }
    for (const Example* ex : to_remove) plan.removals.push_back(ex->id);
    for (const Example* ex : repl) {
      if (dataset_ids.count(ex->id)) {
        throw std::invalid_argument("difficulty_flip: pool id already in dataset: " + ex->id);
      }
      plan.additions.push_back(ex->id);
      added_ids.insert(ex->id);
    }
  }

  // resulting histogram
  std::set<std::string> removed(plan.removals.begin(), plan.removals.end());
  const auto pool_idx = index_by_id(pool);
  const auto bump = [&](const Example& ex) {
    plan.histogram[{to_string(ex.domain), ex.difficulty.value_or(0)}] += 1;
  };
  for (const auto& ex : dataset) {
    if (!removed.count(ex.id)) bump(ex);
  }
  for (const auto& id : plan.additions) bump(*pool_idx.at(id));
  return plan;
}

std::vector<Example> apply_plan(const std::vector<Example>& dataset,
                                const std::vector<Example>& pool, const ReweightPlan& plan) {
  const std::set<std::string> removed(plan.removals.begin(), plan.removals.end());
  const auto pool_idx = index_by_id(pool);
  std::vector<Example> out;
  out.reserve(dataset.size());
  for (const auto& ex : dataset) {
    if (!removed.count(ex.id)) out.push_back(ex);
  }
  for (const auto& id : plan.additions) {
    const auto it = pool_idx.find(id);
    if (it == pool_idx.end()) throw std::invalid_argument("apply_plan: id not in pool: " + id);
    out.push_back(*it->second);
  }
  return out;
}

std::string plan_to_json(const ReweightPlan& plan) {
  json j;
  j["removals"] = plan.removals;
  j["additions"] = plan.additions;
  j["reverse"] = plan.reverse;
  json hist = json::array();
  for (const auto& [key, count] : plan.histogram) {
    hist.push_back({{"count", count}, {"difficulty", key.second}, {"domain", key.first}});
  }
  j["histogram"] = hist;
  json shorts = json::array();
  for (const auto& s : plan.shortfalls) {
    shorts.push_back({{"available", s.available}, {"rule", s.description}, {"wanted", s.wanted}});
  }
  j["shortfalls"] = shorts;
  return j.dump(2);
}

std::string plan_diff_summary(const ReweightPlan& plan) {
  std::ostringstream os;
  os << (plan.reverse ? "difficulty flip (reverse mode)\n" : "difficulty flip\n");
  os << "removed " << plan.removals.size() << " example(s), added " << plan.additions.size()
     << " example(s)\n";
  for (const auto& s : plan.shortfalls) {
    os << "shortfall [" << s.description << "]: wanted " << s.wanted << ", pool provided "
       << s.available << "\n";
  }
  os << "resulting (domain, difficulty) histogram:\n";
  for (const auto& [key, count] : plan.histogram) {
    os << "  " << key.first << " level " << key.second << ": " << count << "\n";
  }
  return os.str();
}

}  // namespace tda
