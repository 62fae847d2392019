#include "tda/dataset.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "tda/hash.hpp"

namespace tda {

using nlohmann::json;

std::string to_string(Domain d) {
  switch (d) {
    case Domain::math: return "math";
    case Domain::code: return "code";
    case Domain::other: return "other";
  }
  return "other";
}

std::string to_string(Behavior b) {
  switch (b) {
    case Behavior::exploration: return "exploration";
    case Behavior::verification: return "verification";
    case Behavior::backtracking: return "backtracking";
    case Behavior::subgoal: return "subgoal";
    case Behavior::backward_chaining: return "backward_chaining";
  }
  return "exploration";
}

Domain domain_from_string(const std::string& s) {
  if (s == "math") return Domain::math;
  if (s == "code") return Domain::code;
  if (s == "other") return Domain::other;
  throw std::invalid_argument("unknown domain: " + s);
}

Behavior behavior_from_string(const std::string& s) {
  if (s == "exploration") return Behavior::exploration;
  if (s == "verification") return Behavior::verification;
  if (s == "backtracking") return Behavior::backtracking;
  if (s == "subgoal") return Behavior::subgoal;
  if (s == "backward_chaining") return Behavior::backward_chaining;
  throw std::invalid_argument("unknown behavior label: " + s);
}

std::string query_set_content_id(const QuerySet& qs) {
  Hasher h;
  h.add("queryset.v1");
  for (const auto& item : qs.items) {
    h.add_u64(item.prompt.size());
    for (int t : item.prompt) h.add_u64(static_cast<std::uint64_t>(t));
    h.add_u64(item.answer.size());
    for (int t : item.answer) h.add_u64(static_cast<std::uint64_t>(t));
  }
  return h.hex();
}

namespace {

Example parse_example(const json& j, const Tokenizer& tok) {
  Example ex;
  if (!j.contains("id") || !j.at("id").is_string()) {
    throw std::invalid_argument("missing required field: id");
  }
  ex.id = j.at("id").get<std::string>();
  if (ex.id.empty()) throw std::invalid_argument("empty id");

  if (!j.contains("prompt") || !j.at("prompt").is_string()) {
    throw std::invalid_argument("missing required field: prompt");
  }
  if (!j.contains("response") || !j.at("response").is_string()) {
    throw std::invalid_argument("missing required field: response");
  }
  ex.prompt = tok.encode(j.at("prompt").get<std::string>());
  ex.response = tok.encode(j.at("response").get<std::string>());
  if (ex.response.empty()) throw std::invalid_argument("empty response");

  if (!j.contains("domain") || !j.at("domain").is_string()) {
    throw std::invalid_argument("missing required field: domain");
  }
  ex.domain = domain_from_string(j.at("domain").get<std::string>());

  if (j.contains("category") && !j.at("category").is_null()) {
    ex.category = j.at("category").get<std::string>();
  }
  if (j.contains("difficulty") && !j.at("difficulty").is_null()) {
    const int d = j.at("difficulty").get<int>();
    if (d < 1 || d > 5) throw std::invalid_argument("difficulty out of range [1,5]");
    ex.difficulty = d;
  }
  if (j.contains("behavior_spans") && !j.at("behavior_spans").is_null()) {
    for (const auto& js : j.at("behavior_spans")) {
      BehaviorSpan span;
      span.label = behavior_from_string(js.at("label").get<std::string>());
      const long long b = js.at("start").get<long long>();
      const long long e = js.at("end").get<long long>();
      if (b < 0 || e <= b || static_cast<std::size_t>(e) > ex.response.size()) {
        throw std::invalid_argument("invalid span bounds");
      }
      span.begin = static_cast<std::size_t>(b);
      span.end = static_cast<std::size_t>(e);
      ex.behavior_spans.push_back(span);
    }
  }
  return ex;
}

}  // namespace

std::vector<Example> ingest_dataset(const std::filesystem::path& path, const Tokenizer& tok,
                                    IngestReport* report) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset: " + path.string());

  std::vector<Example> out;
  IngestReport local;
  IngestReport& rep = report ? *report : local;

  std::map<std::string, std::size_t> seen_ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    ++rep.total_lines;
    try {
      const json j = json::parse(line);
      Example ex = parse_example(j, tok);
      if (!seen_ids.emplace(ex.id, line_no).second) {
        throw std::invalid_argument("duplicate id: " + ex.id);
      }
      out.push_back(std::move(ex));
      ++rep.parsed;
    } catch (const std::exception& e) {
      rep.errors.emplace_back(line_no, e.what());
    }
  }

  if (rep.total_lines > 0 &&
      static_cast<double>(rep.errors.size()) > 0.01 * static_cast<double>(rep.total_lines)) {
    std::ostringstream msg;
    msg << "dataset " << path.string() << ": " << rep.errors.size() << " of " << rep.total_lines
        << " lines malformed (>1%); first error at line " << rep.errors.front().first << ": "
        << rep.errors.front().second;
    throw std::runtime_error(msg.str());
  }
  return out;
}

void write_dataset(const std::filesystem::path& path, const std::vector<Example>& ds,
                   const Tokenizer& tok) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write dataset: " + path.string());
  for (const auto& ex : ds) {
    json j;
    j["id"] = ex.id;
    j["prompt"] = tok.decode(ex.prompt);
    j["response"] = tok.decode(ex.response);
    j["domain"] = to_string(ex.domain);
    if (ex.category) j["category"] = *ex.category;
    if (ex.difficulty) j["difficulty"] = *ex.difficulty;
    if (!ex.behavior_spans.empty()) {
      json spans = json::array();
      for (const auto& s : ex.behavior_spans) {
        spans.push_back({{"end", s.end}, {"label", to_string(s.label)}, {"start", s.begin}});
      }
      j["behavior_spans"] = spans;
    }
    out << j.dump() << "\n";
  }
}

std::map<std::string, const Example*> index_by_id(const std::vector<Example>& ds) {
  std::map<std::string, const Example*> idx;
  for (const auto& ex : ds) idx[ex.id] = &ex;
  return idx;
}

}  // namespace tda
