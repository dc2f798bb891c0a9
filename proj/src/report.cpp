#include "bset/report.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "bset/error.hpp"

namespace bset {
namespace {

std::string fixed2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string shortest(double v) {
  char buf[64];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

std::string yes_no(bool b) { return b ? "yes" : "no"; }

std::string join_scores(const std::vector<double>& v) {
  std::string s;
  char buf[64];
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.10g", v[i]);
    s += (i ? ";" : "") + std::string(buf);
  }
  return s;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::stringstream ss(s);
  while (std::getline(ss, item, sep)) out.push_back(item);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

double num(const std::string& s, std::size_t line) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || *end != '\0') {
    throw FormatError("results line " + std::to_string(line) + ": bad number '" + s + "'");
  }
  return v;
}

bool flag(const std::string& s, std::size_t line) {
  if (s == "yes") return true;
  if (s == "no") return false;
  throw FormatError("results line " + std::to_string(line) + ": expected yes or no, got '" + s + "'");
}

std::vector<double> scores(const std::string& s, std::size_t line) {
  std::vector<double> out;
  if (s.empty()) return out;
  for (const auto& part : split(s, ';')) out.push_back(num(part, line));
  return out;
}

const char* kRowHeader = "model,attack,adv_train,epsilon,ratio,sv,mv,ewv";
const char* kSingleHeader = "adv_train,ratio,accuracy";
const char* kAuditHeader = "adv_train,ratio,gallery,set,truth,mv,sv,ewv,mv_scores,sv_scores,ewv_scores";

std::string csv_row(const ResultRow& r) {
  return r.model + "," + r.attack + "," + yes_no(r.adv_train) + "," + shortest(r.epsilon) + "," +
         fixed2(r.ratio) + "," + fixed2(r.sv) + "," + fixed2(r.mv) + "," + fixed2(r.ewv);
}

}  // namespace

std::string render_results(const ResultsFile& results) {
  std::string out;
  out += "# format_version=" + std::to_string(results.format_version) + "\n";
  out += "# manifest_hash=" + results.manifest_hash + "\n";
  out += std::string(kRowHeader) + "\n";
  for (const auto& r : results.rows) out += csv_row(r) + "\n";
  out += "[single_shot]\n";
  out += std::string(kSingleHeader) + "\n";
  for (const auto& s : results.single_shot) {
    out += yes_no(s.adv_train) + "," + fixed2(s.ratio) + "," + fixed2(s.accuracy) + "\n";
  }
  out += "[audit]\n";
  out += std::string(kAuditHeader) + "\n";
  for (const auto& a : results.audit) {
    const auto& s = a.set;
    out += yes_no(a.adv_train) + "," + fixed2(s.ratio) + "," + std::to_string(s.gallery) + "," +
           std::to_string(s.set) + "," + std::to_string(s.truth) + "," + std::to_string(s.outcome.mv) + "," +
           std::to_string(s.outcome.sv) + "," + std::to_string(s.outcome.ewv) + "," +
           join_scores(s.outcome.mv_scores) + "," + join_scores(s.outcome.sv_scores) + "," +
           join_scores(s.outcome.ewv_scores) + "\n";
  }
  return out;
}

ResultsFile parse_results(const std::string& text) {
  ResultsFile out;
  out.format_version = 0;
  enum { rows, single, audit } part = rows;
  bool header_seen = false;
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.rfind("# format_version=", 0) == 0) {
      out.format_version = static_cast<int>(num(line.substr(17), n));
      continue;
    }
    if (line.rfind("# manifest_hash=", 0) == 0) {
      out.manifest_hash = line.substr(16);
      continue;
    }
    if (line[0] == '#') continue;
    if (line == "[single_shot]") {
      part = single;
      header_seen = false;
      continue;
    }
    if (line == "[audit]") {
      part = audit;
      header_seen = false;
      continue;
    }
    if (!header_seen) {
      const char* expected = part == rows ? kRowHeader : part == single ? kSingleHeader : kAuditHeader;
      if (line != expected) {
        throw FormatError("results line " + std::to_string(n) + ": expected header '" + expected + "'");
      }
      header_seen = true;
      continue;
    }
    const auto f = split(line, ',');
    if (part == rows) {
      if (f.size() != 8) throw FormatError("results line " + std::to_string(n) + ": expected 8 fields");
      out.rows.push_back({f[0], f[1], flag(f[2], n), num(f[3], n), num(f[4], n), num(f[5], n), num(f[6], n),
                          num(f[7], n)});
    } else if (part == single) {
      if (f.size() != 3) throw FormatError("results line " + std::to_string(n) + ": expected 3 fields");
      out.single_shot.push_back({flag(f[0], n), num(f[1], n), num(f[2], n)});
    } else {
      if (f.size() != 11) throw FormatError("results line " + std::to_string(n) + ": expected 11 fields");
      AuditRow a;
      a.adv_train = flag(f[0], n);
      a.set.ratio = num(f[1], n);
      a.set.gallery = static_cast<std::size_t>(num(f[2], n));
      a.set.set = static_cast<std::size_t>(num(f[3], n));
      a.set.truth = static_cast<std::size_t>(num(f[4], n));
      a.set.outcome.mv = static_cast<std::size_t>(num(f[5], n));
      a.set.outcome.sv = static_cast<std::size_t>(num(f[6], n));
      a.set.outcome.ewv = static_cast<std::size_t>(num(f[7], n));
      a.set.outcome.mv_scores = scores(f[8], n);
      a.set.outcome.sv_scores = scores(f[9], n);
      a.set.outcome.ewv_scores = scores(f[10], n);
      out.audit.push_back(std::move(a));
    }
  }
  if (out.format_version == 0) throw FormatError("results file has no format_version line");
  return out;
}

ResultsFile load_results(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read results file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_results(buf.str());
}

Report render_report(const std::vector<ResultsFile>& files) {
  if (files.empty()) throw ArgumentError("render_report needs at least one results file");
  std::set<int> versions;
  for (const auto& f : files) versions.insert(f.format_version);
  if (versions.size() > 1) {
    std::string list;
    for (int v : versions) list += (list.empty() ? "" : ", ") + std::to_string(v);
    throw FormatError("conflicting results format versions: " + list);
  }

  Report report;
  std::set<std::string> seen;
  std::vector<ResultRow> rows;
  std::vector<std::pair<std::string, std::vector<SingleShotRow>>> single;
  for (const auto& f : files) {
    if (!f.manifest_hash.empty() && !seen.insert(f.manifest_hash).second) continue;
    ++report.files_used;
    rows.insert(rows.end(), f.rows.begin(), f.rows.end());
    if (!f.single_shot.empty()) single.emplace_back(f.manifest_hash, f.single_shot);
  }

  std::stable_sort(rows.begin(), rows.end(), [](const ResultRow& a, const ResultRow& b) {
    if (a.attack != b.attack) return a.attack < b.attack;
    if (a.adv_train != b.adv_train) return !a.adv_train;
    if (a.ratio != b.ratio) return a.ratio < b.ratio;
    return a.epsilon < b.epsilon;
  });

  report.csv = std::string(kRowHeader) + "\n";
  for (const auto& r : rows) report.csv += csv_row(r) + "\n";

  // Text: one block per (attack, adv_train) group.
  const std::vector<std::string> head{"model", "attack", "adv_train", "epsilon", "ratio", "SV", "MV", "EWV"};
  std::vector<std::vector<std::string>> cells;
  std::vector<bool> group_start;
  for (std::size_t i = 0; i < rows.size();) {
    std::size_t j = i;
    while (j < rows.size() && rows[j].attack == rows[i].attack && rows[j].adv_train == rows[i].adv_train) ++j;
    double best[3] = {-1.0, -1.0, -1.0};
    for (std::size_t k = i; k < j; ++k) {
      best[0] = std::max(best[0], rows[k].sv);
      best[1] = std::max(best[1], rows[k].mv);
      best[2] = std::max(best[2], rows[k].ewv);
    }
    for (std::size_t k = i; k < j; ++k) {
      const auto& r = rows[k];
      auto mark = [](double v, double b) { return fixed2(v) == fixed2(b) ? "**" + fixed2(v) + "**" : fixed2(v); };
      cells.push_back({r.model, r.attack, yes_no(r.adv_train), shortest(r.epsilon), fixed2(r.ratio),
                       mark(r.sv, best[0]), mark(r.mv, best[1]), mark(r.ewv, best[2])});
      group_start.push_back(k == i);
    }
    i = j;
  }
  std::vector<std::size_t> width(head.size());
  for (std::size_t c = 0; c < head.size(); ++c) width[c] = head[c].size();
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  auto line = [&](const std::vector<std::string>& row) {
    std::string s;
    for (std::size_t c = 0; c < row.size(); ++c) {
      const std::string pad(width[c] - row[c].size(), ' ');
      s += c < 5 ? row[c] + pad : pad + row[c];  // text left, numbers right
      if (c + 1 < row.size()) s += "  ";
    }
    return s + "\n";
  };
  report.text = line(head);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (group_start[i] && i > 0) report.text += "\n";
    report.text += line(cells[i]);
  }
  for (const auto& [hash, entries] : single) {
    report.text += "\nsingle-shot accuracy";
    if (!hash.empty()) report.text += " (" + hash.substr(0, 12) + ")";
    report.text += "\n";
    for (const auto& s : entries) {
      report.text += "  adv_train=" + yes_no(s.adv_train) + " ratio=" + fixed2(s.ratio) + "  " +
                     fixed2(s.accuracy) + "\n";
    }
  }
  return report;
}

Report render_report(const std::vector<std::filesystem::path>& paths) {
  std::vector<ResultsFile> files;
  for (const auto& p : paths) files.push_back(load_results(p));
  return render_report(files);
}

}  // namespace bset
