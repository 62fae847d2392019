#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tda/tokenizer.hpp"

namespace tda {

enum class Domain { math, code, other };

enum class Behavior {
  exploration,
  verification,
  backtracking,
  subgoal,
  backward_chaining,
};

std::string to_string(Domain d);
std::string to_string(Behavior b);
Domain domain_from_string(const std::string& s);
Behavior behavior_from_string(const std::string& s);

// Token index range [begin, end) into Example::response. Spans may overlap.
struct BehaviorSpan {
  Behavior label;
  std::size_t begin = 0;
  std::size_t end = 0;
};

struct Example {
  std::string id;
  std::vector<int> prompt;
  std::vector<int> response;
  Domain domain = Domain::other;
  std::optional<std::string> category;
  std::optional<int> difficulty;  // 1..5 when present
  std::vector<BehaviorSpan> behavior_spans;
};

// D_correct: prompts the trained model answers correctly, paired with the
// gold answers. id is a content hash so downstream artifacts can be traced
// back to the exact query set they were scored against.
struct QueryItem {
  std::vector<int> prompt;
  std::vector<int> answer;
};

struct QuerySet {
  std::vector<QueryItem> items;
  std::string id;

  std::size_t n() const { return items.size(); }
};

std::string query_set_content_id(const QuerySet& qs);

struct IngestReport {
  std::size_t total_lines = 0;
  std::size_t parsed = 0;
  std::vector<std::pair<std::size_t, std::string>> errors;  // (line no, reason)
};

// Line-delimited records, one JSON object per line. Lines that fail
// validation are collected into the report; more than 1% malformed lines is
// a hard failure.
std::vector<Example> ingest_dataset(const std::filesystem::path& path,
                                    const Tokenizer& tok, IngestReport* report = nullptr);

void write_dataset(const std::filesystem::path& path, const std::vector<Example>& ds,
                   const Tokenizer& tok);

std::map<std::string, const Example*> index_by_id(const std::vector<Example>& ds);

}  // namespace tda
