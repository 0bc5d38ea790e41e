#include <csignal>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"

#include "forge/error.hpp"
#include "forge/pipeline.hpp"
#include "forge/tasks.hpp"

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kValidation = 2, kInfeasible = 3, kUpstreamMissing = 4 };

forge::tasks::RewardService* g_service = nullptr;

void stop_service(int) {
  if (g_service) g_service->stop();
}

void print_entry(const forge::pipeline::ManifestEntry& e) {
  std::cout << e.stage << ": " << e.status;
  if (e.status == "skipped") std::cout << " (inputs unchanged)";
  std::cout << "\n" << e.counts.dump(2) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"forge: multilingual code corpus, mixture and evaluation toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  bool resume = false;
  std::vector<std::string> overrides;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "Pipeline configuration (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed-override", overrides, "Replace a stage seed, as stage=value")->take_all();
  };

  std::vector<CLI::App*> stage_cmds;
  for (const auto& stage : forge::pipeline::kStages) {
    auto* sub = app.add_subcommand(stage, "Run the " + stage + " stage");
    add_common(sub);
    sub->add_flag("--resume", resume, "Reuse responses cached by an interrupted run");
    stage_cmds.push_back(sub);
  }

  auto* all = app.add_subcommand("run-all", "Run every configured stage in order");
  add_common(all);
  all->add_flag("--resume", resume, "Reuse responses cached by an interrupted run");

  std::string kind;
  bool plot = false;
  auto* report = app.add_subcommand("report", "Emit CSV reports from stage outputs");
  add_common(report);
  report->add_option("--kind", kind, "stats, mixture, eval or alignment")->required();
  report->add_flag("--plot", plot, "Also write a gnuplot script");

  auto* check = app.add_subcommand("validate", "Check a configuration and exit");
  add_common(check);

  std::string host = "127.0.0.1";
  int port = 8080;
  bool stdio = false;
  auto* serve = app.add_subcommand("serve-reward", "Serve code-generation rewards over HTTP or stdin");
  add_common(serve);
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--port", port, "Port; 0 picks a free one");
  serve->add_flag("--stdio", stdio, "Read requests from stdin, one JSON object per line");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? kOk : kValidation;
  }

  try {
    auto config = forge::pipeline::load_config(config_path, overrides);
    forge::pipeline::StageContext ctx;
    ctx.resume = resume;

    for (std::size_t i = 0; i < stage_cmds.size(); ++i) {
      if (stage_cmds[i]->parsed()) {
        print_entry(forge::pipeline::run_stage(config, forge::pipeline::kStages[i], ctx));
        return kOk;
      }
    }
    if (all->parsed()) {
      for (const auto& stage : forge::pipeline::kStages) {
        if (config.document.contains(stage)) print_entry(forge::pipeline::run_stage(config, stage, ctx));
      }
      return kOk;
    }
    if (report->parsed()) {
      for (const auto& f : forge::pipeline::emit_report(config, forge::pipeline::report_kind(kind), plot)) {
        std::cout << f.string() << "\n";
      }
      return kOk;
    }
    if (check->parsed()) {
      std::cout << "config ok; work dir " << config.work_dir.string() << "\n";
      return kOk;
    }
    if (serve->parsed()) {
      auto questions = forge::pipeline::load_questions(config);
      if (questions.empty()) throw forge::UpstreamMissingError("ingest", "no ingested questions to score against");
      forge::sandbox::Sandbox judge(forge::pipeline::load_registry(config));
      forge::sandbox::ResourceLimits limits = config.verify ? config.verify->limits : forge::sandbox::ResourceLimits{};
      forge::tasks::RewardService service(std::move(questions), judge, limits);
      if (stdio) {
        service.serve_lines(std::cin, std::cout);
        return kOk;
      }
      g_service = &service;
      std::signal(SIGINT, stop_service);
      std::signal(SIGTERM, stop_service);
      int bound = port == 0 ? service.bind_http(host) : port;
      if (bound < 0) throw forge::IoError("cannot bind " + host);
      std::cerr << "serving rewards on http://" << host << ":" << bound << "\n";
      bool ok = port == 0 ? service.listen_after_bind() : service.serve_http(host, port);
      g_service = nullptr;
      if (!ok) throw forge::IoError("cannot listen on " + host + ":" + std::to_string(port));
      return kOk;
    }
  } catch (const forge::UpstreamMissingError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUpstreamMissing;
  } catch (const forge::InfeasibleError& e) {
    std::cerr << "error: infeasible: " << e.what() << "\n";
    return kInfeasible;
  } catch (const forge::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}
