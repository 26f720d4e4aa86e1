// Batch evaluation: scripted-user trials over a category x user-count grid.
#include <chrono>
#include <fstream>
#include <iostream>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "walle/errors.hpp"
#include "walle/eval.hpp"

namespace {

std::vector<walle::Category> parse_categories(const std::string& text) {
  if (text == "all") return {std::begin(walle::kReportCategoryOrder), std::end(walle::kReportCategoryOrder)};
  auto c = walle::category_from_string(text);
  if (!c) throw CLI::ValidationError("--category", "expected bottle, bowl, mug or all");
  return {*c};
}

std::vector<int> parse_users(const std::string& text) {
  if (text == "all") return {1, 2, 3};
  if (text == "1" || text == "2" || text == "3") return {text[0] - '0'};
  throw CLI::ValidationError("--users", "expected 1, 2, 3 or all");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"walle-eval: run scripted grasping trials and report Ins/Vis/Grasp success"};
  std::string config_path;
  std::string catalog_path = std::string(WALLE_DATA_DIR) + "/catalog.json";
  std::string category = "all";
  std::string users = "1";
  int attempts = 15;
  std::uint64_t seed = 0;
  std::string backend = "mock";
  std::string out_path;
  std::string records_path;
  bool screened = false;

  app.add_option("--config", config_path, "run-config JSON");
  app.add_option("--catalog", catalog_path, "object catalog JSON")->capture_default_str();
  app.add_option("--category", category, "bottle|bowl|mug|all")->capture_default_str();
  app.add_option("--users", users, "1|2|3|all")->capture_default_str();
  app.add_option("--attempts", attempts, "attempts per cell")->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--seed", seed, "master seed")->capture_default_str();
  app.add_option("--backend", backend, "mock|remote")->capture_default_str()->check(CLI::IsMember({"mock", "remote"}));
  app.add_option("--out", out_path, "report path (.csv or .json)");
  app.add_option("--records", records_path, "per-trial JSON lines");
  app.add_flag("--screened", screened, "reject scenes whose target fails a noise-free execution");
  CLI11_PARSE(app, argc, argv);

  try {
    const auto categories = parse_categories(category);
    const auto user_counts = parse_users(users);
    const auto catalog = walle::load_catalog(catalog_path);
    const auto run = config_path.empty() ? walle::RunConfig{} : walle::RunConfig::load(config_path);

    std::ofstream records;
    if (!records_path.empty()) {
      records.open(records_path);
      if (!records) throw std::runtime_error("cannot write " + records_path);
    }

    const auto t0 = std::chrono::steady_clock::now();
    std::map<walle::CellKey, std::vector<walle::TrialRecord>> grid;
    for (int n : user_counts) {
      for (auto c : categories) {
        walle::TrialConfig cfg;
        cfg.category = c;
        cfg.user_count = n;
        cfg.attempts = attempts;
        cfg.run = run;
        cfg.backend = backend == "remote" ? walle::BackendKind::remote : walle::BackendKind::mock;
        cfg.seed = walle::derive_seed(seed, static_cast<std::uint64_t>(n * 16 + static_cast<int>(c)));
        cfg.screened = screened;
        auto recs = walle::run_trials(cfg, catalog);
        if (records) {
          for (const auto& r : recs) {
            auto j = r.to_json();
            j["user_count"] = n;
            j["category"] = std::string(walle::to_string(c));
            records << j.dump() << '\n';
          }
        }
        grid[{n, c}] = std::move(recs);
      }
    }
    const auto table = walle::aggregate(grid);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    std::cout << table.to_text();
    std::cout << fmt::format("{} attempts in {:.2f} s\n", attempts * grid.size(), secs);

    if (!out_path.empty()) {
      const auto ext = std::filesystem::path(out_path).extension();
      walle::export_report(table, ext == ".json" ? walle::ReportFormat::json : walle::ReportFormat::csv, out_path);
    }
  } catch (const std::exception& ex) {
    std::cerr << "walle-eval: " << ex.what() << '\n';
    return 1;
  }
  return 0;
}
