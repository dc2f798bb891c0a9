#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "bset/defence.hpp"

namespace bset {

struct SingleShotRow {
  bool adv_train = false;
  double ratio = 0.0;
  double accuracy = 0.0;  // percent
};

struct AuditRow {
  bool adv_train = false;
  SetAudit set;
};

// Contents of a results file:
//
//   # format_version=1
//   # manifest_hash=<hex>
//   model,attack,adv_train,epsilon,ratio,sv,mv,ewv
//   ...
//   [single_shot]
//   adv_train,ratio,accuracy
//   ...
//   [audit]
//   adv_train,ratio,gallery,set,truth,mv,sv,ewv,mv_scores,sv_scores,ewv_scores
//   ...                                   (scores are ;-separated)
struct ResultsFile {
  int format_version = 1;
  std::string manifest_hash;
  std::vector<ResultRow> rows;
  std::vector<SingleShotRow> single_shot;
  std::vector<AuditRow> audit;
};

std::string render_results(const ResultsFile& results);
ResultsFile parse_results(const std::string& text);
ResultsFile load_results(const std::filesystem::path& path);

struct Report {
  std::string text;  // aligned table, best value per column and group wrapped in ** **
  std::string csv;
  std::size_t files_used = 0;  // after deduplication
};

// Groups rows by (attack, adv_train), sorts each group by ratio and formats
// percentages with 2 decimals. Files sharing a manifest hash are merged
// once; mixed format versions are rejected with FormatError.
Report render_report(const std::vector<ResultsFile>& files);
Report render_report(const std::vector<std::filesystem::path>& paths);

}  // namespace bset
