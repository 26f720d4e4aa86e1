#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "walle/config.hpp"
#include "walle/dialogue.hpp"
#include "walle/grasp.hpp"
#include "walle/llm.hpp"
#include "walle/scene.hpp"

namespace walle {

enum class BackendKind { mock, remote };

struct TrialConfig {
  Category category = Category::bottle;
  int user_count = 1;
  int attempts = 15;
  RunConfig run;  // noise, gripper, workspace, llm_failure, ...
  BackendKind backend = BackendKind::mock;
  std::uint64_t seed = 0;
  bool screened = false;
  std::size_t objects_per_scene = 5;

  void validate() const;  // throws PreconditionError
};

struct TrialRecord {
  int attempt = 0;
  std::uint64_t trial_seed = 0;
  std::string requesting_user;
  std::string true_target_id;
  bool ins_ok = false;
  bool vis_ok = false;
  bool grasp_ok = false;
  MissClass miss = MissClass::ok;
  std::optional<OutcomeClass> outcome;  // absent when nothing was executed
  std::optional<std::string> grounded_id;

  bool operator==(const TrialRecord&) const = default;
  nlohmann::json to_json() const;
};

/// Runs cfg.attempts full pipeline attempts. Pipeline failures become records; only
/// configuration problems throw. `remote` overrides the backend built from cfg.run.llm.
std::vector<TrialRecord> run_trials(const TrialConfig& cfg, const Catalog& catalog,
                                    std::shared_ptr<const ChatBackend> remote = nullptr);

/// Percentage held as integer hundredths so that rounding is exact.
struct Percent {
  std::int64_t hundredths = 0;

  /// 100 * num / den rounded half-up to two decimals.
  static Percent ratio(std::int64_t num, std::int64_t den);
  /// Mean of already rounded percentages, rounded half-up.
  static Percent mean(const std::vector<Percent>& values);

  double value() const { return static_cast<double>(hundredths) / 100.0; }
  std::string str() const;  // "93.33", "100.00"
  auto operator<=>(const Percent&) const = default;
};

/// Throws PreconditionError on empty input.
Percent success_rate(const std::vector<TrialRecord>& records, const std::function<bool(const TrialRecord&)>& selector);

struct CellCounts {
  int attempts = 0;
  int ins = 0;
  int vis = 0;
  int grasp = 0;
};

struct CellRates {
  Percent ins, vis, grasp;
};

using CellKey = std::pair<int, Category>;  // (user_count, category)

/// Rows are user counts, column groups categories. Each total is the half-up mean of the
/// rounded percentages it pools, not a ratio of pooled counts.
struct ReportTable {
  std::vector<int> user_counts;
  std::vector<Category> categories;
  std::map<CellKey, CellRates> cells;
  std::map<int, Percent> total_grasp;             // per user count, pooled over categories
  std::map<Category, CellRates> category_totals;  // per category, pooled over user counts
  Percent grand_total_grasp;

  std::string to_csv() const;
  nlohmann::json to_json() const;
  std::string to_text() const;
};

/// Column order used in reports.
inline constexpr Category kReportCategoryOrder[] = {Category::bowl, Category::bottle, Category::mug};

/// Throws PreconditionError if the present user counts x categories do not form a full grid.
ReportTable aggregate_counts(const std::map<CellKey, CellCounts>& grid);
ReportTable aggregate(const std::map<CellKey, std::vector<TrialRecord>>& grid);

enum class ReportFormat { csv, json };

void export_report(const ReportTable& table, ReportFormat format, const std::filesystem::path& path);

}  // namespace walle
