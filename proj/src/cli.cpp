#include "pbtw/cli.hpp"

#include <csignal>
#include <cstdlib>
#include <iostream>

#include "CLI11.hpp"
#include "pbtw/campaign.hpp"
#include "pbtw/error.hpp"
#include "pbtw/service.hpp"
#include "pbtw/session.hpp"
#include "pbtw/util.hpp"

namespace pbtw {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string env_or(const char* name, std::string fallback) {
  const char* v = std::getenv(name);
  return v && *v ? std::string(v) : fallback;
}

struct Common {
  std::string data_dir = env_or("PBT_DATA_DIR", "pbt-data");
  std::string runner = env_or("PBT_RUNNER_CMD", "python3 -m pbt_sandbox_runner");
  bool json_out = false;
};

struct PlanFlags {
  int runs = 200;
  std::uint64_t seed = 0;
  bool no_coverage = false;
  bool no_mutation = false;
  double soundness = 0.10;
  int timeout_ms = 2000;
  std::vector<std::string> operators;

  EvaluationPlanConfig plan() const {
    EvaluationPlanConfig p;
    p.n_runs = runs;
    p.seed = seed;
    p.collect_coverage = !no_coverage;
    p.mutation = !no_mutation;
    p.thresholds.soundness = soundness;
    p.per_run_timeout = std::chrono::milliseconds(timeout_ms);
    if (!operators.empty()) p.operators = operators;
    return p;
  }

  void attach(CLI::App* app) {
    app->add_option("--runs", runs, "Runs per test")->check(CLI::PositiveNumber);
    app->add_option("--seed", seed, "Base seed");
    app->add_flag("--no-coverage", no_coverage, "Skip coverage collection");
    app->add_flag("--no-mutation", no_mutation, "Skip mutation analysis");
    app->add_option("--soundness-threshold", soundness, "Unsound above this failure rate");
    app->add_option("--per-run-timeout-ms", timeout_ms, "Per-run timeout")->check(CLI::PositiveNumber);
    app->add_option("--operators", operators, "Mutation operators (default all)");
  }
};

volatile std::sig_atomic_t g_stop = 0;
void on_signal(int) { g_stop = 1; }

}  // namespace

int cli_dispatch(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Synthesize, evaluate and refine property-based tests", argv.empty() ? "pbt-workbench" : argv[0]};
  app.require_subcommand(1);
  Common c;
  app.add_option("--data-dir", c.data_dir, "Session store (env PBT_DATA_DIR)");
  app.add_option("--runner", c.runner, "Runner command line (env PBT_RUNNER_CMD)");
  app.add_flag("--json", c.json_out, "Machine-readable output");

  // synth
  auto* synth = app.add_subcommand("synth", "Open a session and synthesize artifact v1");
  std::string target_name, docs_file, strategy = "together", provider_spec, library, module_path, input_object,
                                          session_id;
  synth->add_option("--target", target_name, "Dotted qualname, e.g. numpy.cumsum")->required();
  synth->add_option("--docs", docs_file, "Documentation text file")->required()->check(CLI::ExistingFile);
  synth->add_option("--strategy", strategy, "independent, consecutive or together")
      ->check(CLI::IsMember({"independent", "consecutive", "together", "Independent", "Consecutive", "Together"}));
  synth->add_option("--provider", provider_spec, "replay:<dir>, replay-ordinal:<dir> or http:[model@]<url>")->required();
  synth->add_option("--library", library, "Library label (default: first qualname component)");
  synth->add_option("--module", module_path, "Module to import (default: first qualname component)");
  synth->add_option("--input-object", input_object, "Type of the main input, e.g. networkx.Graph");
  synth->add_option("--session-id", session_id, "Explicit session id");

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "Run the latest artifact and score it");
  std::string eval_session;
  evaluate->add_option("--session", eval_session, "Session id")->required();
  PlanFlags plan_flags;
  plan_flags.attach(evaluate);

  // mitigate
  auto* mitigate = app.add_subcommand("mitigate", "Send the mitigation for one flagged issue");
  std::string mit_session, issue_id, payload, payload_file;
  bool dry_run = false;
  mitigate->add_option("--session", mit_session, "Session id")->required();
  mitigate->add_option("--issue", issue_id, "Issue id from the latest evaluation")->required();
  auto* payload_opt = mitigate->add_option("--payload", payload, "Edited payload text");
  mitigate->add_option("--payload-file", payload_file, "Edited payload file")
      ->check(CLI::ExistingFile)
      ->excludes(payload_opt);
  mitigate->add_flag("--dry-run", dry_run, "Print the outbound prompt without sending it");

  // campaign run
  auto* campaign = app.add_subcommand("campaign", "Batch evaluation");
  campaign->require_subcommand(1);
  auto* campaign_run = campaign->add_subcommand("run", "Run a campaign from a config file");
  std::string config_file, output_override;
  int parallelism = 0;
  bool auto_mitigate = false;
  campaign_run->add_option("--config", config_file, "Campaign config JSON")->required()->check(CLI::ExistingFile);
  campaign_run->add_option("--output", output_override, "Override output_dir");
  campaign_run->add_option("--parallelism", parallelism, "Override worker count")->check(CLI::PositiveNumber);
  campaign_run->add_flag("--auto-mitigate", auto_mitigate, "Apply default mitigations and re-evaluate");

  // report
  auto* report = app.add_subcommand("report", "Print a session or campaign report");
  std::string report_session, report_campaign, report_format = "text";
  auto* rs = report->add_option("--session", report_session, "Session id");
  auto* rc = report->add_option("--campaign", report_campaign, "Campaign output directory")->excludes(rs);
  report->add_option("--format", report_format, "text, markdown or json")
      ->check(CLI::IsMember({"text", "markdown", "md", "json"}));
  report->callback([&] {
    if (!*rs && !*rc) throw CLI::RequiredError("--session or --campaign");
  });

  // show / verify / close
  auto* show = app.add_subcommand("show", "Print a session");
  std::string show_session;
  show->add_option("--session", show_session, "Session id")->required();
  auto* verify = app.add_subcommand("verify", "Re-derive every artifact version from the journal");
  std::string verify_session_id, replay_dir;
  verify->add_option("--session", verify_session_id, "Session id")->required();
  verify->add_option("--replay", replay_dir, "Also re-request replies from this fixture directory");
  auto* close = app.add_subcommand("close", "Close a session");
  std::string close_session;
  close->add_option("--session", close_session, "Session id")->required();

  // serve
  auto* serve = app.add_subcommand("serve", "Serve the HTTP API");
  std::string host = "127.0.0.1", serve_provider;
  int port = 8080;
  std::size_t pool_size = 2;
  std::vector<std::string> cors;
  serve->add_option("--host", host, "Listen address");
  serve->add_option("--port", port, "Listen port")->check(CLI::Range(0, 65535));
  serve->add_option("--provider", serve_provider, "Default provider for new sessions");
  serve->add_option("--cors", cors, "Allowed browser origins");
  serve->add_option("--runners", pool_size, "Runner processes")->check(CLI::PositiveNumber);

  // runner check
  auto* runner = app.add_subcommand("runner", "Runner utilities");
  runner->require_subcommand(1);
  auto* runner_check = runner->add_subcommand("check", "Start the runner and ping it");

  std::vector<const char*> raw;
  for (const auto& a : argv) raw.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(raw.size()), raw.data());
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kExitOk;
    }
    err << "usage error: " << e.what() << "\n";
    auto* failed = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    err << failed->help();
    return kExitUsage;
  }

  auto manager = [&](RunnerPool* pool) {
    SessionContext ctx;
    ctx.data_dir = c.data_dir;
    ctx.runners = pool;
    return std::make_unique<SessionManager>(ctx);
  };
  auto make_pool = [&] { return std::make_unique<RunnerPool>(RunnerCommand::parse(c.runner), std::map<std::string, std::string>{}, 1); };

  try {
    if (*synth) {
      TargetApi t;
      t.qualname = target_name;
      t.doc_text = read_file(docs_file);
      t.module_path = module_path.empty() ? target_name.substr(0, target_name.find('.')) : module_path;
      t.library = library.empty() ? t.module_path.substr(0, t.module_path.find('.')) : library;
      if (!input_object.empty()) t.input_object = input_object;
      auto mgr = manager(nullptr);
      auto s = mgr->open(t, strategy_from_string(strategy), ProviderConfig::parse_shorthand(provider_spec),
                         session_id.empty() ? std::nullopt : std::optional<std::string>(session_id));
      if (c.json_out) {
        out << session_to_json(s).dump(2) << "\n";
      } else {
        out << s.session_id << "\n";
      }
    } else if (*evaluate) {
      auto pool = make_pool();
      auto mgr = manager(pool.get());
      auto card = mgr->evaluate(eval_session, plan_flags.plan());
      out << (c.json_out ? json(card).dump(2) + "\n" : render_scorecard_text(card));
    } else if (*mitigate) {
      auto mgr = manager(nullptr);
      std::optional<std::string> edited;
      if (!payload_file.empty()) edited = read_file(payload_file);
      if (!payload.empty()) edited = payload;
      if (dry_run) {
        auto s = mgr->load(mit_session);
        const auto* e = s.latest_evaluation();
        const Issue* issue = e ? e->scorecard.find_issue(issue_id) : nullptr;
        if (!issue) throw Error(ErrorCode::NotFound, "no issue '" + issue_id + "' in the latest evaluation");
        auto action = default_action(*issue);
        if (edited) action = action.with_payload(*edited);
        auto prompt = build_mitigation_prompt(action, s.artifact_name(action));
        if (c.json_out) {
          out << json{{"action", action}, {"prompt", prompt}}.dump(2) << "\n";
        } else {
          out << prompt.text << "\n";
        }
        return kExitOk;
      }
      auto action = mgr->choose_mitigation(mit_session, issue_id, edited);
      int v = mgr->apply_mitigation(mit_session);
      if (c.json_out) {
        out << json{{"session_id", mit_session}, {"action", action}, {"version", v}}.dump(2) << "\n";
      } else {
        out << "version " << v << "\n";
      }
    } else if (*campaign_run) {
      auto cfg = CampaignConfig::load(config_file);
      if (!output_override.empty()) cfg.output_dir = output_override;
      if (parallelism > 0) cfg.parallelism = parallelism;
      if (auto_mitigate) cfg.auto_mitigate = true;
      RunnerPool pool(RunnerCommand::parse(c.runner), {}, static_cast<std::size_t>(cfg.parallelism));
      auto rep = run_campaign(cfg, CampaignContext{&pool, nullptr, {}});
      out << render_report(rep, c.json_out ? ReportFormat::JsonDoc : ReportFormat::TextTable);
    } else if (*report) {
      auto fmt = c.json_out ? ReportFormat::JsonDoc : report_format_from_string(report_format);
      if (!report_campaign.empty()) {
        auto file = fs::path(report_campaign) / "campaign.json";
        if (!fs::is_regular_file(file)) throw Error(ErrorCode::NotFound, "no campaign.json in " + report_campaign);
        out << render_report(json::parse(read_file(file)), fmt);
      } else {
        auto mgr = manager(nullptr);
        auto r = mgr->report(report_session);
        if (fmt == ReportFormat::JsonDoc) {
          out << r.dump(2) << "\n";
        } else {
          out << r["text"].get<std::string>();
        }
      }
    } else if (*show) {
      auto mgr = manager(nullptr);
      auto s = mgr->load(show_session);
      if (c.json_out) {
        out << session_to_json(s).dump(2) << "\n";
      } else {
        out << s.session_id << " " << to_string(s.state) << " v" << (s.artifacts.empty() ? 0 : s.artifacts.back().version)
            << " evaluations=" << s.evaluations.size() << "\n";
      }
    } else if (*verify) {
      auto mgr = manager(nullptr);
      auto dir = mgr->session_dir(verify_session_id);
      auto r = verify_session(dir, TemplateSet::shipped(),
                              replay_dir.empty() ? std::nullopt : std::optional<fs::path>(replay_dir));
      if (c.json_out) {
        out << json{{"ok", r.ok}, {"versions_checked", r.versions_checked}, {"problems", r.problems}}.dump(2) << "\n";
      } else {
        out << (r.ok ? "ok" : "MISMATCH") << ": " << r.versions_checked << " versions checked\n";
        for (const auto& p : r.problems) out << "  " << p << "\n";
      }
      return r.ok ? kExitOk : kExitDomainError;
    } else if (*close) {
      manager(nullptr)->close(close_session);
      out << (c.json_out ? json{{"session_id", close_session}, {"state", "Closed"}}.dump() : close_session + " closed")
          << "\n";
    } else if (*serve) {
      ServiceConfig sc;
      sc.host = host;
      sc.port = port;
      sc.data_dir = c.data_dir;
      sc.runner_cmd = c.runner;
      sc.runner_pool_size = pool_size;
      sc.cors_allowlist = cors;
      if (!serve_provider.empty()) sc.provider = ProviderConfig::parse_shorthand(serve_provider);
      Service service(sc);
      service.start();
      err << "listening on " << host << ":" << service.port() << (service.read_only() ? " (read-only: runner down)" : "")
          << "\n";
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
      service.stop();
    } else if (*runner_check) {
      auto h = RunnerHandle::start(RunnerCommand::parse(c.runner));
      auto version = h->version();
      h->shutdown();
      if (c.json_out) {
        out << json{{"runner", "up"}, {"protocol_version", version}}.dump() << "\n";
      } else {
        out << "runner up, protocol version " << version << "\n";
      }
    }
  } catch (const Error& e) {
    if (c.json_out) {
      out << error_body(e.type(), e.what()).dump() << "\n";
    } else {
      err << "error: " << e.type() << ": " << e.what() << "\n";
    }
    return kExitDomainError;
  } catch (const json::exception& e) {
    err << "error: InvalidArgument: " << e.what() << "\n";
    return kExitDomainError;
  }
  return kExitOk;
}

}  // namespace pbtw
