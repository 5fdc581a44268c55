#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "sgsd/config.hpp"
#include "sgsd/error.hpp"
#include "sgsd/extraction.hpp"
#include "sgsd/gate.hpp"
#include "sgsd/hash.hpp"
#include "sgsd/skillbank.hpp"
#include "sgsd/trainer.hpp"

namespace sgsd::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = "sgsd-out";
  bool quiet = false;
};

trainer::RunConfig resolve_config(const Globals& g) {
  trainer::RunConfig config;
  if (!g.config_path.empty()) config = trainer::load_config(g.config_path);
  if (g.seed) config.seed = *g.seed;
  config.validate();
  return config;
}

std::string plural(std::size_t n, const char* one, const char* many) {
  return fmt::format("{} {}", n, n == 1 ? one : many);
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream file(path);
  if (!file) throw std::runtime_error("cannot write " + path.string());
  file << text;
  if (!file) throw std::runtime_error("failed writing " + path.string());
}

// --- commands -------------------------------------------------------------

int cmd_coldstart(const Globals& g, std::ostream& out) {
  auto config = resolve_config(g);
  config.bank_path.clear();
  const auto model = trainer::initial_policy(config);
  const auto extractor = extraction::make_extractor(config.extractor);
  const auto bank = trainer::initial_bank(config, model, *extractor);
  const fs::path dir(g.out);
  skillbank::save_bank(bank, dir / "bank.json");
  policy::save_checkpoint(model, dir / "policy_initial.json");
  out << fmt::format("cold start: {}, {} -> {}\n",
                     plural(bank.general_skills.size(), "general skill", "general skills"),
                     plural(bank.common_mistakes.size(), "common mistake", "common mistakes"),
                     (dir / "bank.json").string());
  return kOk;
}

int cmd_train(const Globals& g, long steps, std::ostream& out) {
  auto config = resolve_config(g);
  if (steps >= 0) config.steps = steps;
  config.out_dir = g.out;
  config.validate();
  const auto report = trainer::train(config);
  out << fmt::format("trained {} steps; success {} -> {}; bank {}, {}; outputs in {}\n", report.steps.size(),
                     report.initial_success ? fmt::format("{:.3f}", *report.initial_success) : "n/a",
                     report.final_success ? fmt::format("{:.3f}", *report.final_success) : "n/a",
                     plural(report.final_skills, "general skill", "general skills"),
                     plural(report.final_mistakes, "common mistake", "common mistakes"), g.out);
  return kOk;
}

int cmd_eval(const Globals& g, const std::string& checkpoint, int samples, std::ostream& out) {
  const auto config = resolve_config(g);
  const fs::path path = checkpoint.empty() ? fs::path(g.out) / "policy_final.json" : fs::path(checkpoint);
  const auto model = policy::load_checkpoint(path);
  const auto suite = trainer::make_suite(config);
  const int n = samples > 0 ? samples : config.eval_samples;
  if (n <= 0) throw ConfigError("--samples", "must be > 0");
  const double rate = trainer::evaluate(model, suite, n, mix_seed(config.seed, fnv1a("eval")));
  const json result = {{"checkpoint", path.string()},
                       {"tasks", suite.size()},
                       {"samples_per_task", n},
                       {"seed", config.seed},
                       {"success_rate", rate}};
  write_text(fs::path(g.out) / "eval.json", result.dump(2) + "\n");
  out << fmt::format("success rate {:.4f} over {} tasks x {} samples\n", rate, suite.size(), n);
  return kOk;
}

template <typename Entry>
std::vector<std::string> ids_with(const std::vector<Entry>& entries, skillbank::Origin origin) {
  std::vector<std::string> ids;
  for (const auto& e : entries) {
    if (e.origin != origin) continue;
    if constexpr (std::is_same_v<Entry, skillbank::GeneralSkill>) {
      ids.push_back(e.skill_id);
    } else {
      ids.push_back(e.mistake_id);
    }
  }
  return ids;
}

std::string id_list(const std::vector<std::string>& ids) {
  if (ids.empty()) return "-";
  std::string s;
  for (const auto& id : ids) s += (s.empty() ? "" : " ") + id;
  return s;
}

int cmd_bank_inspect(const std::string& path, std::ostream& out) {
  using skillbank::Origin;
  const auto bank = skillbank::load_bank(path);
  out << plural(bank.general_skills.size(), "general skill", "general skills") << ", "
      << plural(bank.common_mistakes.size(), "common mistake", "common mistakes") << '\n';
  const auto gs = ids_with(bank.general_skills, Origin::kStatic);
  const auto gd = ids_with(bank.general_skills, Origin::kDynamic);
  const auto ms = ids_with(bank.common_mistakes, Origin::kStatic);
  const auto md = ids_with(bank.common_mistakes, Origin::kDynamic);
  out << fmt::format("general skills: {} static, {} dynamic\n", gs.size(), gd.size());
  out << "  static:  " << id_list(gs) << '\n' << "  dynamic: " << id_list(gd) << '\n';
  out << fmt::format("common mistakes: {} static, {} dynamic\n", ms.size(), md.size());
  out << "  static:  " << id_list(ms) << '\n' << "  dynamic: " << id_list(md) << '\n';
  return kOk;
}

template <typename Entry, typename ToJson, typename FromCandidate>
std::vector<Entry> merge_collection(const std::vector<Entry>& entries, skillbank::EntryKind kind,
                                    extraction::Extractor& extractor, const skillbank::MergeParams& params,
                                    ToJson to_json, FromCandidate from_candidate) {
  std::vector<Entry> merged;
  std::size_t next = 1;
  for (auto origin : {skillbank::Origin::kStatic, skillbank::Origin::kDynamic}) {
    std::vector<json> items;
    for (const auto& e : entries) {
      if (e.origin == origin) items.push_back(to_json(e));
    }
    if (items.empty()) continue;
    const auto result = skillbank::hierarchical_merge(items, kind, extractor, params, next);
    for (const auto& item : result.items) merged.push_back(from_candidate(item, origin));
    next += result.items.size();
  }
  return merged;
}

int cmd_bank_merge(const Globals& g, const std::string& path, std::ostream& out) {
  const auto config = resolve_config(g);
  auto bank = skillbank::load_bank(path);
  const auto before_skills = bank.general_skills.size();
  const auto before_mistakes = bank.common_mistakes.size();
  const auto extractor = extraction::make_extractor(config.extractor);
  const auto& params = config.evolution.merge;
  bank.general_skills = merge_collection(bank.general_skills, skillbank::EntryKind::kSkill, *extractor, params,
                                         skillbank::skill_to_json, skillbank::skill_from_candidate);
  bank.common_mistakes = merge_collection(bank.common_mistakes, skillbank::EntryKind::kMistake, *extractor, params,
                                          skillbank::mistake_to_json, skillbank::mistake_from_candidate);
  skillbank::check_ids(bank);
  const fs::path dest = fs::path(g.out) / "bank_merged.json";
  skillbank::save_bank(bank, dest);
  out << fmt::format("general skills {} -> {}, common mistakes {} -> {}; written to {}\n", before_skills,
                     bank.general_skills.size(), before_mistakes, bank.common_mistakes.size(), dest.string());
  return kOk;
}

int cmd_bank_snapshots(const std::string& dir, std::ostream& out) {
  if (!fs::is_directory(dir)) throw std::runtime_error("not a directory: " + dir);
  const auto snaps = skillbank::list_snapshots(dir);
  for (const auto& [step, path] : snaps) {
    const auto bank = skillbank::load_bank(path);
    out << fmt::format("{}\t{}\t{}\t{}\n", step, path.filename().string(), bank.general_skills.size(),
                       bank.common_mistakes.size());
  }
  if (snaps.empty()) out << "no snapshots in " << dir << '\n';
  return kOk;
}

struct CurveOptions {
  double tau = 1.0;
  double lo = -6.0;
  double hi = 6.0;
  int points = 241;
  bool svg = false;
};

struct CurveRow {
  double delta;
  double loss;
  double grad;
};

std::string render_svg(const std::vector<CurveRow>& rows, const CurveOptions& o, double bound) {
  const double w = 640, h = 360, pad = 40;
  double ymax = std::log(2.0);
  for (const auto& r : rows) ymax = std::max({ymax, r.loss, std::abs(r.grad)});
  const auto x = [&](double d) { return pad + (d - o.lo) / (o.hi - o.lo) * (w - 2 * pad); };
  const auto y = [&](double v) { return h / 2 - v / ymax * (h / 2 - pad); };
  auto polyline = [&](auto value, const char* colour) {
    std::string pts;
    for (const auto& r : rows) pts += fmt::format("{:.2f},{:.2f} ", x(r.delta), y(value(r)));
    return fmt::format(R"(<polyline fill="none" stroke="{}" stroke-width="2" points="{}"/>)", colour, pts);
  };
  std::string svg = fmt::format(R"(<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}">)", w, h) + "\n";
  svg += fmt::format(R"(<rect width="{}" height="{}" fill="white"/>)", w, h) + "\n";
  svg += fmt::format(R"(<line x1="{}" y1="{:.2f}" x2="{}" y2="{:.2f}" stroke="#999"/>)", pad, y(0), w - pad, y(0)) +
         "\n";
  svg += fmt::format(R"(<line x1="{:.2f}" y1="{}" x2="{:.2f}" y2="{}" stroke="#999"/>)", x(0), pad, x(0), h - pad) +
         "\n";
  for (double b : {bound, -bound}) {
    svg += fmt::format(R"(<line x1="{}" y1="{:.2f}" x2="{}" y2="{:.2f}" stroke="#d62728" stroke-dasharray="4 4"/>)",
                       pad, y(b), w - pad, y(b)) +
           "\n";
  }
  svg += polyline([](const CurveRow& r) { return r.loss; }, "#1f77b4") + "\n";
  svg += polyline([](const CurveRow& r) { return r.grad; }, "#ff7f0e") + "\n";
  svg += fmt::format(R"(<text x="{}" y="20" font-family="sans-serif" font-size="13">)"
                     R"(gated loss (blue) and gradient (orange), tau = {}</text>)",
                     pad, o.tau) +
         "\n</svg>\n";
  return svg;
}

int cmd_gate_curve(const Globals& g, const CurveOptions& o, std::ostream& out) {
  const gate::GateParams params{o.tau};
  try {
    params.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("--tau", e.what());
  }
  if (!(o.hi > o.lo)) throw ConfigError("--max", "must exceed --min");
  if (o.points < 2) throw ConfigError("--points", "must be >= 2");
  std::vector<CurveRow> rows;
  std::string csv = "delta,loss,grad\n";
  for (int i = 0; i < o.points; ++i) {
    const double d = o.lo + (o.hi - o.lo) * i / (o.points - 1);
    rows.push_back({d, gate::gate_loss(d, params), gate::gate_grad(d, params)});
    csv += fmt::format("{:.17g},{:.17g},{:.17g}\n", d, rows.back().loss, rows.back().grad);
  }
  const fs::path dir(g.out);
  write_text(dir / "gate_curve.csv", csv);
  out << "wrote " << (dir / "gate_curve.csv").string() << '\n';
  if (o.svg) {
    write_text(dir / "gate_curve.svg", render_svg(rows, o, gate::gate_grad_bound(params)));
    out << "wrote " << (dir / "gate_curve.svg").string() << '\n';
  }
  return kOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Skill-conditioned self-distillation toolkit", "sgsd"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  std::uint64_t seed = 0;
  app.add_option("--config", g.config_path, "Run configuration (JSON)");
  auto* seed_opt = app.add_option("--seed", seed, "Override the configured seed");
  app.add_option("--out", g.out, "Output directory; every written file lands here")->capture_default_str();
  app.add_flag("--quiet", g.quiet, "Only log errors");

  auto* coldstart = app.add_subcommand("coldstart", "Build a static skill bank by cold start");

  long steps = -1;
  auto* train = app.add_subcommand("train", "Run the training loop");
  train->add_option("--steps", steps, "Override the configured step count");

  std::string checkpoint;
  int samples = 0;
  auto* eval = app.add_subcommand("eval", "Evaluate a policy checkpoint on the task suite");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint to evaluate (default: <out>/policy_final.json)");
  eval->add_option("--samples", samples, "Rollouts per task (default: eval.samples)");

  auto* bank = app.add_subcommand("bank", "Skill bank utilities");
  bank->require_subcommand(1);
  std::string bank_path;
  auto* inspect = bank->add_subcommand("inspect", "Print entry counts and ids");
  inspect->add_option("bank", bank_path, "Bank JSON file")->required();
  auto* merge = bank->add_subcommand("merge", "Hierarchically merge a bank's entries");
  merge->add_option("bank", bank_path, "Bank JSON file")->required();
  std::string snapshot_dir;
  auto* snapshots = bank->add_subcommand("snapshot-list", "List bank snapshots in a directory");
  snapshots->add_option("dir", snapshot_dir, "Snapshot directory (e.g. <out>/bank)")->required();

  CurveOptions curve;
  auto* gate_curve = app.add_subcommand("gate-curve", "Tabulate the gated loss and its gradient");
  gate_curve->add_option("--tau", curve.tau, "Gate temperature")->capture_default_str();
  gate_curve->add_option("--min", curve.lo, "Smallest gap")->capture_default_str();
  gate_curve->add_option("--max", curve.hi, "Largest gap")->capture_default_str();
  gate_curve->add_option("--points", curve.points, "Grid points")->capture_default_str();
  gate_curve->add_flag("--svg", curve.svg, "Also render gate_curve.svg");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    err << app.help();
    return kUsage;
  }
  if (*seed_opt) g.seed = seed;

  const auto previous_level = spdlog::get_level();
  if (g.quiet) spdlog::set_level(spdlog::level::err);
  int code = kRuntime;
  try {
    if (*coldstart) {
      code = cmd_coldstart(g, out);
    } else if (*train) {
      code = cmd_train(g, steps, out);
    } else if (*eval) {
      code = cmd_eval(g, checkpoint, samples, out);
    } else if (*inspect) {
      code = cmd_bank_inspect(bank_path, out);
    } else if (*merge) {
      code = cmd_bank_merge(g, bank_path, out);
    } else if (*snapshots) {
      code = cmd_bank_snapshots(snapshot_dir, out);
    } else if (*gate_curve) {
      code = cmd_gate_curve(g, curve, out);
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    code = kConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    code = kRuntime;
  }
  spdlog::set_level(previous_level);
  return code;
}

}  // namespace sgsd::cli
