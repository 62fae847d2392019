#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "tda/pipeline.hpp"

namespace tda {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt_score(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string html_escape(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

// a single response token (one byte) rendered for the heatmap
std::string render_token(int token) {
  if (token == '\n') return "&#9166;<br>";
  if (token == ' ') return "&nbsp;";
  if (token >= 33 && token <= 126) {
    return html_escape(std::string(1, static_cast<char>(token)));
  }
  char buf[16];
  std::snprintf(buf, sizeof buf, "\\x%02x", token & 0xff);
  return buf;
}

const char* kStyle =
    "body{font-family:monospace;margin:2em;max-width:72em}"
    "table{border-collapse:collapse;margin:1em 0}"
    "td,th{border:1px solid #bbb;padding:2px 8px;text-align:left}"
    "span.tok{padding:0 1px}"
    "span.top{background:#ffd54d;font-weight:bold}"
    ".muted{color:#777}";

std::string heatmap_page(const Example& ex, const InfluenceRecord& rec, double fraction) {
  const auto& scores = *rec.token_scores;
  const auto top = top_tokens(rec, fraction);
  const std::set<std::size_t> top_set(top.begin(), top.end());

  std::ostringstream os;
  os << "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>" << html_escape(ex.id)
     << "</title><style>" << kStyle << "</style></head><body>\n";
  os << "<h1>" << html_escape(ex.id) << "</h1>\n";
  os << "<p>instance score " << fmt_score(rec.instance_score) << "; highlighting the top "
     << fmt_score(fraction * 100.0) << "% of " << scores.size() << " response tokens</p>\n";

  const Tokenizer tok;
  os << "<p class=\"muted\">prompt: " << html_escape(tok.decode(ex.prompt)) << "</p>\n";
  os << "<div>\n";
  for (std::size_t t = 0; t < ex.response.size() && t < scores.size(); ++t) {
    const bool hot = top_set.count(t) > 0;
    os << "<span class=\"tok" << (hot ? " top" : "") << "\" title=\"" << t << ": "
       << fmt_score(scores[t]) << "\">" << render_token(ex.response[t]) << "</span>";
  }
  os << "\n</div>\n";

  os << "<h2>top tokens</h2>\n<table><tr><th>rank</th><th>index</th><th>token</th>"
     << "<th>score</th></tr>\n";
  for (std::size_t r = 0; r < top.size(); ++r) {
    const std::size_t t = top[r];
    os << "<tr><td>" << (r + 1) << "</td><td>" << t << "</td><td>"
       << render_token(ex.response[t]) << "</td><td>" << fmt_score(scores[t]) << "</td></tr>\n";
  }
  os << "</table>\n";
  if (!rec.span_scores.empty()) {
    os << "<h2>behavior spans</h2>\n<table><tr><th>label</th><th>range</th><th>score</th></tr>\n";
    for (const auto& s : rec.span_scores) {
      os << "<tr><td>" << to_string(s.label) << "</td><td>[" << s.begin << ", " << s.end
         << ")</td><td>" << fmt_score(s.score) << "</td></tr>\n";
    }
    os << "</table>\n";
  }
  os << "</body></html>\n";
  return os.str();
}

void group_table(std::ostringstream& os, const json& arr) {
  os << "<table><tr><th>group</th><th>count</th><th>mean</th><th>std error</th></tr>\n";
  for (const auto& g : arr) {
    os << "<tr><td>" << html_escape(g.at("key").get<std::string>()) << "</td><td>"
       << g.at("count").get<std::size_t>() << "</td><td>"
       << fmt_score(g.at("mean").get<double>()) << "</td><td>"
       << fmt_score(g.at("std_error").get<double>()) << "</td></tr>\n";
  }
  os << "</table>\n";
}

}  // namespace

std::vector<fs::path> emit_report(const std::vector<InfluenceRecord>& records,
                                  const std::vector<Example>& dataset,
                                  const ReportOptions& options, const json& analysis,
                                  const fs::path& out_dir) {
  if (!(options.top_fraction > 0.0) || options.top_fraction > 1.0) {
    throw std::invalid_argument("emit_report: top_fraction must be in (0, 1]");
  }
  const fs::path report_dir = out_dir / "report";
  fs::create_directories(report_dir);
  std::vector<fs::path> written;

  // heatmap selection: highest instance scores among token-scored records
  std::vector<const InfluenceRecord*> token_recs;
  for (const auto& r : records) {
    if (r.token_scores && !r.token_scores->empty()) token_recs.push_back(&r);
  }
  if (options.heatmap_examples > 0 && token_recs.empty()) {
    throw std::invalid_argument(
        "emit_report: no token scores in the records; enable the token score target (targets.token) "
        "or set heatmap_examples to 0");
  }
  std::sort(token_recs.begin(), token_recs.end(),
            [](const InfluenceRecord* a, const InfluenceRecord* b) {
              if (a->instance_score != b->instance_score) {
                return a->instance_score > b->instance_score;
              }
              return a->example_id < b->example_id;
            });
  if (token_recs.size() > options.heatmap_examples) {
    token_recs.resize(options.heatmap_examples);
  }

  const auto idx = index_by_id(dataset);

  // machine-readable summary
  {
    json summary;
    summary["analysis"] = analysis;
    summary["options"] = {{"top_fraction", options.top_fraction},
                          {"heatmap_examples", options.heatmap_examples}};
    json scores = json::array();
    for (const auto& r : records) {
      json jr = {{"id", r.example_id}, {"instance", r.instance_score}};
      if (r.token_scores) {
        InfluenceRecord tmp = r;
        json top = json::array();
        for (std::size_t t : top_tokens(tmp, options.top_fraction)) top.push_back(t);
        jr["top_tokens"] = top;
      }
      scores.push_back(jr);
    }
    summary["scores"] = scores;
    json heat = json::array();
    for (const auto* r : token_recs) heat.push_back(r->example_id);
    summary["heatmaps"] = heat;

    std::ofstream out(report_dir / "summary.json", std::ios::binary);
    if (!out) throw std::runtime_error("cannot write report summary");
    out << summary.dump(2) << "\n";
    written.emplace_back("report/summary.json");
  }

  // per-example heatmap documents
  std::vector<std::pair<std::string, std::string>> heat_links;
  for (const auto* rec : token_recs) {
    const auto it = idx.find(rec->example_id);
    if (it == idx.end()) {
      throw std::invalid_argument("emit_report: record id not in dataset: " + rec->example_id);
    }
    const std::string fname = "ex_" + rec->example_id + ".html";
    std::ofstream out(report_dir / fname, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write heatmap file: " + fname);
    out << heatmap_page(*it->second, *rec, options.top_fraction);
    written.emplace_back(fs::path("report") / fname);
    heat_links.emplace_back(rec->example_id, fname);
  }

  // index page
  {
    std::ostringstream os;
    os << "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>influence report"
       << "</title><style>" << kStyle << "</style></head><body>\n<h1>influence report</h1>\n";

    if (analysis.contains("ids")) {
      os << "<p class=\"muted\">checkpoint "
         << html_escape(analysis.at("ids").at("checkpoint").get<std::string>()).substr(0, 12)
         << "&hellip;, query set "
         << html_escape(analysis.at("ids").at("query_set").get<std::string>()).substr(0, 12)
         << "&hellip;</p>\n";
    }

    if (analysis.contains("rankings")) {
      os << "<h2>top examples</h2>\n<table><tr><th>#</th><th>id</th><th>score</th></tr>\n";
      std::size_t rank = 1;
      for (const auto& row : analysis.at("rankings").at("top")) {
        os << "<tr><td>" << rank++ << "</td><td>" << html_escape(row[0].get<std::string>())
           << "</td><td>" << fmt_score(row[1].get<double>()) << "</td></tr>\n";
      }
      os << "</table>\n";
    }

    if (analysis.contains("groups")) {
      for (const auto& [key, arr] : analysis.at("groups").items()) {
        os << "<h2>by " << html_escape(key) << "</h2>\n";
        group_table(os, arr);
      }
    }
    if (analysis.contains("behavior") && !analysis.at("behavior").empty()) {
      os << "<h2>by behavior</h2>\n";
      group_table(os, analysis.at("behavior"));
    }
    if (analysis.contains("robustness")) {
      os << "<h2>rank correlation vs. reference n</h2>\n<table><tr><th>n</th><th>"
         << "pearson</th></tr>\n";
      for (const auto& [n, c] : analysis.at("robustness").items()) {
        os << "<tr><td>" << html_escape(n) << "</td><td>" << fmt_score(c.get<double>())
           << "</td></tr>\n";
      }
      os << "</table>\n";
    }
    if (analysis.contains("flip") && !analysis.at("flip").is_null()) {
      const auto& flip = analysis.at("flip");
      os << "<h2>difficulty flip plan</h2>\n<p>removals "
         << flip.at("removals").size() << ", additions " << flip.at("additions").size()
         << (flip.at("reverse").get<bool>() ? " (reverse mode)" : "") << "</p>\n";
    }

    os << "<h2>token heatmaps</h2>\n<ul>\n";
    for (const auto& [id, fname] : heat_links) {
      os << "<li><a href=\"" << fname << "\">" << html_escape(id) << "</a></li>\n";
    }
    os << "</ul>\n</body></html>\n";

    std::ofstream out(report_dir / "index.html", std::ios::binary);
    if (!out) throw std::runtime_error("cannot write report index");
    out << os.str();
    written.emplace_back("report/index.html");
  }

  return written;
}

}  // namespace tda
