#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "printtrace/commands.hpp"

namespace {

using namespace printtrace;

int fail(const std::string& kind, std::string message, int code) {
  for (auto& c : message)
    if (c == '\n' || c == '\r') c = ' ';
  std::cerr << "printtrace: error: " << kind << ": " << message << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Source printer identification from scanned text pages"};
  app.require_subcommand(1);
  std::string config_path, out, seed;
  int jobs = -1;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "key = value settings file");
  app.add_option("--seed", seed, "master seed");
  app.add_option("--jobs", jobs, "worker threads (default: PRINTTRACE_JOBS, then all cores)");
  app.add_option("--out", out, "output file or directory");
  app.add_option("--set", overrides, "override a setting: key=value");

  std::vector<std::string> inputs;
  std::string labels, bank;
  std::vector<std::string> modes;
  auto* segment = app.add_subcommand("segment", "write connected components of pages as CSV");
  segment->add_option("inputs", inputs, "PGM files or directories")->required();
  auto* extract = app.add_subcommand("extract", "write letter descriptor batches");
  extract->add_option("inputs", inputs, "PGM files or directories")->required();
  auto* pool = app.add_subcommand("pool", "pool descriptor batches by block");
  pool->add_option("inputs", inputs, "descriptor batches or directories")->required();
  auto* train = app.add_subcommand("train", "build a reference bank from pooled features");
  train->add_option("inputs", inputs, "pooled feature files or directories")->required();
  train->add_option("--labels", labels, "path,printer label map");
  auto* predict = app.add_subcommand("predict", "predict printers of pooled files or pages");
  predict->add_option("--bank", bank, "reference bank")->required();
  predict->add_option("inputs", inputs, "pooled feature files, PGM pages or directories")->required();
  auto* evaluate = app.add_subcommand("evaluate", "run a train/test experiment and write a report");
  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
  auto* analyze = app.add_subcommand("analyze", "correlation, spread and LDA tables");
  analyze->add_option("inputs", inputs, "descriptor batches or directories")->required();
  analyze->add_option("--labels", labels, "path,printer label map");
  analyze->add_option("--mode", modes, "sc-cc, variance, lda (default: all)");

  for (auto* sub : {segment, extract, pool, train, predict, evaluate, synth, analyze}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }

  try {
    Config config;
    std::vector<std::string> problems;
    if (!config_path.empty()) config.load(config_path, problems);
    for (const auto& o : overrides) {
      const auto eq = o.find('=');
      if (eq == std::string::npos)
        problems.push_back("--set " + o + ": expected key=value");
      else
        config.set(o.substr(0, eq), o.substr(eq + 1), "--set", problems);
    }
    if (!seed.empty()) config.set("seed", seed, "--seed", problems);
    if (jobs >= 0) config.set("jobs", std::to_string(jobs), "--jobs", problems);
    if (!out.empty()) config.set("out", out, "--out", problems);
    if (!labels.empty()) config.set("label_map", labels, "--labels", problems);
    if (!problems.empty()) throw ConfigError(problems);
    const auto settings = resolve_settings(config);

    if (segment->parsed()) return cli::cmd_segment(settings, inputs, std::cout);
    if (extract->parsed()) return cli::cmd_extract(settings, inputs, std::cout);
    if (pool->parsed()) return cli::cmd_pool(settings, inputs, std::cout);
    if (train->parsed()) return cli::cmd_train(settings, inputs, std::cout);
    if (predict->parsed()) return cli::cmd_predict(settings, bank, inputs, std::cout);
    if (evaluate->parsed()) return cli::cmd_evaluate(settings, std::cout);
    if (synth->parsed()) return cli::cmd_synth(settings, std::cout);
    if (analyze->parsed()) {
      std::set<std::string> m(modes.begin(), modes.end());
      if (m.empty()) m = {"sc-cc", "variance", "lda"};
      return cli::cmd_analyze(settings, inputs, m, std::cout);
    }
  } catch (const ConfigError& e) {
    return fail("config", e.what(), 2);
  } catch (const IoError& e) {
    return fail("io", e.what(), 3);
  } catch (const FormatError& e) {
    return fail("format", e.what(), 4);
  } catch (const InvalidArgument& e) {
    return fail("invalid", e.what(), 5);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), 1);
  }
  return 1;
}
