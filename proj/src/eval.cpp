#include "walle/eval.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "walle/errors.hpp"
#include "walle/pipeline.hpp"
#include "walle/rng.hpp"

namespace walle {

using nlohmann::json;

void TrialConfig::validate() const {
  if (attempts < 1) throw PreconditionError("attempts must be at least 1");
  if (user_count < 1 || user_count > static_cast<int>(Session::kMaxUsers)) {
    throw PreconditionError("user_count must be 1, 2 or 3");
  }
  if (objects_per_scene < static_cast<std::size_t>(user_count)) {
    throw PreconditionError("need at least one object per user");
  }
  run.noise.validate();
  run.gripper.validate();
}

json TrialRecord::to_json() const {
  return {{"attempt", attempt},
          {"trial_seed", trial_seed},
          {"requesting_user", requesting_user},
          {"true_target_id", true_target_id},
          {"ins_ok", ins_ok},
          {"vis_ok", vis_ok},
          {"grasp_ok", grasp_ok},
          {"miss", std::string(to_string(miss))},
          {"outcome", outcome ? json(std::string(to_string(*outcome))) : json(nullptr)},
          {"grounded_id", grounded_id ? json(*grounded_id) : json(nullptr)}};
}

// ---------------------------------------------------------------------------
// Trials

namespace {

constexpr int kMaxSceneDraws = 1000;

constexpr const char* kPreferenceTemplates[] = {
    "I'd like the {}, please.",
    "Could you bring me the {}?",
    "I am in the mood for the {}.",
};

struct Attempt {
  Scene scene;
  std::vector<std::string> users;
  std::string requester;
  std::map<std::string, const ObjectInstance*> targets;  // user -> true target
};

bool passes_screen(const Scene& scene, const ObjectInstance& target, const RunConfig& run) {
  RunConfig exact = run;
  exact.noise = NoiseModel{};
  Rng rng(0);
  const TargetCommand cmd{target.name, target.color, target.category, "screen"};
  if (correct_target_id(scene, cmd) != target.id) return false;
  const auto trace = run_grasp_pipeline(scene, cmd, exact, rng);
  return trace.outcome && trace.outcome->outcome == OutcomeClass::success;
}

Attempt prepare_attempt(const TrialConfig& cfg, const Catalog& catalog, std::uint64_t trial_seed, int index) {
  Attempt a;
  for (int u = 1; u <= cfg.user_count; ++u) a.users.push_back(fmt::format("user{}", u));
  a.requester = a.users[static_cast<std::size_t>(index % cfg.user_count)];

  for (int draw = 0; draw < kMaxSceneDraws; ++draw) {
    Scene scene = sample_scene(catalog, cfg.objects_per_scene, derive_seed(trial_seed, 1000 + draw));
    std::vector<const ObjectInstance*> eligible;
    for (const auto& o : scene.objects) {
      if (o.category != cfg.category) continue;
      if (cfg.screened && !passes_screen(scene, o, cfg.run)) continue;
      eligible.push_back(&o);
    }
    if (eligible.empty()) continue;

    a.scene = std::move(scene);
    Rng rng(derive_seed(trial_seed, 2));
    const std::size_t pick = std::uniform_int_distribution<std::size_t>(0, eligible.size() - 1)(rng);
    const std::string target_id = eligible[pick]->id;
    a.targets[a.requester] = &a.scene.at(target_id);

    std::vector<const ObjectInstance*> others;
    for (const auto& o : a.scene.objects) {
      if (o.id != target_id) others.push_back(&o);
    }
    std::shuffle(others.begin(), others.end(), rng);
    std::size_t k = 0;
    for (const auto& u : a.users) {
      if (u != a.requester) a.targets[u] = others[k++];
    }
    return a;
  }
  throw PreconditionError(fmt::format("no usable scene for category '{}' after {} draws", to_string(cfg.category),
                                      kMaxSceneDraws));
}

MockScript make_script(const Attempt& a, const FailureInjection& injection, Rng& rng) {
  MockScript script;
  script.failure_injection = injection;
  std::uniform_int_distribution<std::size_t> pick_template(0, std::size(kPreferenceTemplates) - 1);
  for (const auto& u : a.users) {
    const auto* t = a.targets.at(u);
    ScriptedUser su;
    su.id = u;
    su.utterances = {"Hello, what do you have on the table today?",
                     fmt::format(fmt::runtime(kPreferenceTemplates[pick_template(rng)]), t->name)};
    su.true_target = ScriptedUser::Target{t->name, t->color, t->category};
    script.users.push_back(std::move(su));
  }
  return script;
}

TrialRecord run_attempt(const TrialConfig& cfg, const Catalog& catalog, int index,
                        const std::shared_ptr<const ChatBackend>& remote) {
  TrialRecord rec;
  rec.attempt = index;
  rec.trial_seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(index));

  const Attempt a = prepare_attempt(cfg, catalog, rec.trial_seed, index);
  const ObjectInstance& truth = *a.targets.at(a.requester);
  rec.requesting_user = a.requester;
  rec.true_target_id = truth.id;

  Rng script_rng(derive_seed(rec.trial_seed, 3));
  FailureInjection injection = cfg.run.llm_failure;
  injection.seed = derive_seed(injection.seed, rec.trial_seed);
  MockScript script = make_script(a, injection, script_rng);

  std::shared_ptr<const ChatBackend> backend = remote;
  if (!backend) backend = std::make_shared<ScriptedMock>(script);

  const TargetCommand expected{truth.name, truth.color, truth.category, a.requester};
  Session session = start_session(backend, a.scene, a.users);

  // Greetings first, then preferences; the requester speaks last in each round.
  std::vector<std::string> order;
  for (const auto& u : a.users) {
    if (u != a.requester) order.push_back(u);
  }
  order.push_back(a.requester);

  std::optional<TargetCommand> produced;
  try {
    for (std::size_t round = 0; round < 2; ++round) {
      for (const auto& u : order) {
        const auto& su = *std::find_if(script.users.begin(), script.users.end(), [&](const auto& s) { return s.id == u; });
        session.post_user_utterance(u, su.utterances[round]);
      }
    }
    if (session.phase() == Phase::target_proposed) produced = session.command();
  } catch (const BackendError&) {
    // Counted as a missing command.
  }
  rec.miss = classify_target_miss(expected, produced).miss;
  rec.ins_ok = rec.miss == MissClass::ok;

  if (!produced) return rec;
  const auto& confirmer = produced->requesting_user;
  if (std::find(a.users.begin(), a.users.end(), confirmer) == a.users.end()) return rec;
  try {
    session.confirm_target(confirmer, true);
  } catch (const BackendError&) {
    return rec;
  }

  const TargetCommand cmd = session.begin_execution();
  Rng perception_rng(derive_seed(rec.trial_seed, 0x7065ull ^ cfg.run.noise.seed));
  const auto trace = run_grasp_pipeline(session.scene(), cmd, cfg.run, perception_rng);
  if (trace.grounding) rec.grounded_id = trace.grounding->selected_id;
  if (trace.outcome) rec.outcome = trace.outcome->outcome;
  // Stages are cumulative: a later stage only counts when the earlier ones did.
  rec.vis_ok = rec.ins_ok && rec.grounded_id == truth.id;
  rec.grasp_ok = rec.vis_ok && trace.outcome && trace.outcome->outcome == OutcomeClass::success &&
                 trace.outcome->grasped_id == truth.id;

  session.finish_execution(trace.report());
  try {
    session.report_feedback(rec.grasp_ok ? FeedbackOutcome::success : FeedbackOutcome::failure);
  } catch (const BackendError&) {
    // The attempt is already scored.
  }
  return rec;
}

}  // namespace

std::vector<TrialRecord> run_trials(const TrialConfig& cfg, const Catalog& catalog,
                                    std::shared_ptr<const ChatBackend> remote) {
  cfg.validate();
  if (cfg.backend == BackendKind::remote && !remote) remote = std::make_shared<RemoteChat>(cfg.run.llm);
  if (cfg.backend == BackendKind::mock) remote.reset();
  std::vector<TrialRecord> records;
  records.reserve(static_cast<std::size_t>(cfg.attempts));
  for (int i = 0; i < cfg.attempts; ++i) records.push_back(run_attempt(cfg, catalog, i, remote));
  return records;
}

// ---------------------------------------------------------------------------
// Metrics

Percent Percent::ratio(std::int64_t num, std::int64_t den) {
  if (den <= 0) throw PreconditionError("percentage of an empty set");
  // round(10000 * num / den) half-up, in integers
  return {(20000 * num + den) / (2 * den)};
}

Percent Percent::mean(const std::vector<Percent>& values) {
  if (values.empty()) throw PreconditionError("mean of no percentages");
  std::int64_t sum = 0;
  for (const auto& v : values) sum += v.hundredths;
  const auto n = static_cast<std::int64_t>(values.size());
  return {(2 * sum + n) / (2 * n)};
}

std::string Percent::str() const { return fmt::format("{}.{:02d}", hundredths / 100, hundredths % 100); }

Percent success_rate(const std::vector<TrialRecord>& records, const std::function<bool(const TrialRecord&)>& selector) {
  if (records.empty()) throw PreconditionError("success rate of no records");
  const auto hits = std::count_if(records.begin(), records.end(), selector);
  return Percent::ratio(hits, static_cast<std::int64_t>(records.size()));
}

ReportTable aggregate_counts(const std::map<CellKey, CellCounts>& grid) {
  if (grid.empty()) throw PreconditionError("empty result grid");
  ReportTable t;
  std::set<int> users;
  std::set<Category> cats;
  for (const auto& [key, _] : grid) {
    users.insert(key.first);
    cats.insert(key.second);
  }
  t.user_counts.assign(users.begin(), users.end());
  for (auto c : kReportCategoryOrder) {
    if (cats.count(c)) t.categories.push_back(c);
  }
  for (int u : t.user_counts) {
    for (auto c : t.categories) {
      auto it = grid.find({u, c});
      if (it == grid.end()) {
        throw PreconditionError(fmt::format("missing grid cell users={} category={}", u, to_string(c)));
      }
      const auto& n = it->second;
      if (n.attempts < 1) throw PreconditionError("grid cell without attempts");
      t.cells[{u, c}] = {Percent::ratio(n.ins, n.attempts), Percent::ratio(n.vis, n.attempts),
                         Percent::ratio(n.grasp, n.attempts)};
    }
  }
  std::vector<Percent> grand;
  for (int u : t.user_counts) {
    std::vector<Percent> row;
    for (auto c : t.categories) row.push_back(t.cells[{u, c}].grasp);
    t.total_grasp[u] = Percent::mean(row);
  }
  for (auto c : t.categories) {
    std::vector<Percent> ins, vis, grasp;
    for (int u : t.user_counts) {
      const auto& cell = t.cells[{u, c}];
      ins.push_back(cell.ins);
      vis.push_back(cell.vis);
      grasp.push_back(cell.grasp);
    }
    t.category_totals[c] = {Percent::mean(ins), Percent::mean(vis), Percent::mean(grasp)};
    grand.push_back(t.category_totals[c].grasp);
  }
  t.grand_total_grasp = Percent::mean(grand);
  return t;
}

ReportTable aggregate(const std::map<CellKey, std::vector<TrialRecord>>& grid) {
  std::map<CellKey, CellCounts> counts;
  for (const auto& [key, records] : grid) {
    if (records.empty()) throw PreconditionError("grid cell without records");
    CellCounts n;
    for (const auto& r : records) {
      ++n.attempts;
      n.ins += r.ins_ok;
      n.vis += r.vis_ok;
      n.grasp += r.grasp_ok;
    }
    counts[key] = n;
  }
  return aggregate_counts(counts);
}

std::string ReportTable::to_csv() const {
  std::string out = "user_count,category,ins,vis,grasp,total_grasp\n";
  for (int u : user_counts) {
    for (auto c : categories) {
      const auto& cell = cells.at({u, c});
      out += fmt::format("{},{},{},{},{},{}\n", u, to_string(c), cell.ins.str(), cell.vis.str(), cell.grasp.str(),
                         total_grasp.at(u).str());
    }
  }
  for (auto c : categories) {
    const auto& cell = category_totals.at(c);
    out += fmt::format("total,{},{},{},{},{}\n", to_string(c), cell.ins.str(), cell.vis.str(), cell.grasp.str(),
                       grand_total_grasp.str());
  }
  return out;
}

json ReportTable::to_json() const {
  json rows = json::array();
  for (int u : user_counts) {
    for (auto c : categories) {
      const auto& cell = cells.at({u, c});
      rows.push_back({{"user_count", u},
                      {"category", std::string(to_string(c))},
                      {"ins", cell.ins.str()},
                      {"vis", cell.vis.str()},
                      {"grasp", cell.grasp.str()},
                      {"total_grasp", total_grasp.at(u).str()}});
    }
  }
  json totals = json::array();
  for (auto c : categories) {
    const auto& cell = category_totals.at(c);
    totals.push_back({{"category", std::string(to_string(c))},
                      {"ins", cell.ins.str()},
                      {"vis", cell.vis.str()},
                      {"grasp", cell.grasp.str()}});
  }
  return {{"rows", std::move(rows)}, {"totals", std::move(totals)}, {"total_grasp", grand_total_grasp.str()}};
}

std::string ReportTable::to_text() const {
  std::string head = fmt::format("{:>6} |", "users");
  for (auto c : categories) head += fmt::format(" {:^26} |", to_string(c));
  head += fmt::format(" {:>7}\n", "Total");
  std::string sub = fmt::format("{:>6} |", "");
  for (std::size_t i = 0; i < categories.size(); ++i) sub += fmt::format(" {:>8}{:>9}{:>9} |", "Ins", "Vis", "Grasp");
  sub += fmt::format(" {:>7}\n", "Grasp");
  std::string out = head + sub;
  for (int u : user_counts) {
    out += fmt::format("{:>6} |", u);
    for (auto c : categories) {
      const auto& cell = cells.at({u, c});
      out += fmt::format(" {:>8}{:>9}{:>9} |", cell.ins.str(), cell.vis.str(), cell.grasp.str());
    }
    out += fmt::format(" {:>7}\n", total_grasp.at(u).str());
  }
  out += fmt::format("{:>6} |", "Total");
  for (auto c : categories) {
    const auto& cell = category_totals.at(c);
    out += fmt::format(" {:>8}{:>9}{:>9} |", cell.ins.str(), cell.vis.str(), cell.grasp.str());
  }
  out += fmt::format(" {:>7}\n", grand_total_grasp.str());
  return out;
}

void export_report(const ReportTable& table, ReportFormat format, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write report " + path.string());
  if (format == ReportFormat::csv) {
    out << table.to_csv();
  } else {
    out << table.to_json().dump(2) << '\n';
  }
  if (!out) throw std::runtime_error("failed writing report " + path.string());
}

}  // namespace walle
