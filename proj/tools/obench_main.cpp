// obench: instruction-override benchmarking and output-moderation toolkit.
//
// Subcommands: bench run, bench judge, report heatmap, ppl sweep, rope fit,
// rope alpha, moderate demo. Exit codes: 0 success, 1 configuration error,
// 2 runtime error.

#include <cstdio>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "obench/bench.hpp"
#include "obench/config.hpp"
#include "obench/moderation.hpp"
#include "obench/report.hpp"
#include "obench/rope.hpp"

namespace {

using namespace obench;

struct BenchRunArgs {
  std::string config_path;
  std::vector<std::string> corpus_paths;
  int synthetic_tokens = 0;
  std::string output_dir;
  std::vector<std::string> cases;
  std::string endpoint_kind;
  std::string base_url;
  std::string model_name;
  int max_tokens = -1;
  int parallelism = -1;
  long long seed = -1;
  std::vector<int> grid_lengths;
  std::vector<double> grid_depths;
  bool snap_sentence = false;
  bool export_prompts = false;
  bool dry_run = false;
};

RunConfig build_run_config(const BenchRunArgs& args) {
  RunConfig rc;
  if (!args.config_path.empty()) rc = run_config_from_file(args.config_path);
  if (!args.corpus_paths.empty()) rc.corpus_paths = args.corpus_paths;
  if (args.synthetic_tokens > 0) rc.synthetic_tokens = args.synthetic_tokens;
  if (!args.output_dir.empty()) rc.output_dir = args.output_dir;
  if (!args.cases.empty()) rc.case_names = args.cases;
  if (!args.endpoint_kind.empty()) {
    rc.endpoint.kind = args.endpoint_kind == "remote" ? EndpointConfig::Kind::remote
                                                      : EndpointConfig::Kind::local;
  }
  if (!args.base_url.empty()) rc.endpoint.base_url = args.base_url;
  if (!args.model_name.empty()) rc.endpoint.model_name = args.model_name;
  if (args.max_tokens > 0) rc.endpoint.max_tokens = args.max_tokens;
  if (args.parallelism > 0) rc.parallelism = args.parallelism;
  if (args.seed >= 0) rc.seed = static_cast<std::uint64_t>(args.seed);
  if (!args.grid_lengths.empty()) rc.grid.lengths = args.grid_lengths;
  if (!args.grid_depths.empty()) rc.grid.depths = args.grid_depths;
  if (args.snap_sentence) rc.snap_sentence = true;
  return rc;
}

int cmd_bench_run(const BenchRunArgs& args) {
  RunConfig rc = build_run_config(args);
  if (args.export_prompts || args.dry_run) {
    rc.validate();
    Corpus corpus = rc.synthetic_tokens > 0
                        ? Corpus{synthetic_corpus(rc.synthetic_tokens, rc.synthetic_seed), {}}
                        : load_corpus(rc.corpus_paths);
    auto cases = resolve_cases(rc);
    Tokenizer tok = harness_tokenizer(corpus, cases);
    auto instances = expand_run(cases, rc.grid, corpus, tok, rc.snap_sentence);
    std::filesystem::create_directories(rc.output_dir);
    auto path = std::filesystem::path(rc.output_dir) / "prompts.jsonl";
    export_prompts(instances, path);
    std::printf("wrote %zu prompts to %s\n", instances.size(), path.string().c_str());
    if (args.dry_run) return 0;
  }
  BenchResult result = run_bench(rc);
  for (const auto& grid : result.grids) {
    std::printf("%-20s mean score %.4f over %zu cells\n", grid.case_name.c_str(),
                mean_ok_score(grid), grid.cells.size());
  }
  std::printf("wrote %zu files to %s (%zu ok cells, %zu errors)\n", result.written.size(),
              result.output_dir.string().c_str(), result.ok_cells, result.error_cells);
  return result.ok_cells >= 1 ? 0 : 2;
}

int cmd_bench_judge(const std::string& transcript, const std::string& out_dir,
                    const std::string& config_path, const std::vector<std::string>& case_names) {
  std::vector<TestCase> cases;
  if (!config_path.empty()) {
    RunConfig rc = run_config_from_file(config_path);
    if (!case_names.empty()) rc.case_names = case_names;
    cases = resolve_cases(rc);
  } else if (!case_names.empty()) {
    RunConfig rc;
    rc.case_names = case_names;
    cases = resolve_cases(rc);
  } else {
    cases = builtin_test_cases();
  }
  auto entries = read_transcripts(transcript);
  BenchResult result = judge_transcripts(entries, cases, out_dir);
  for (const auto& grid : result.grids) {
    std::printf("%-20s mean score %.4f over %zu cells\n", grid.case_name.c_str(),
                mean_ok_score(grid), grid.cells.size());
  }
  return result.ok_cells >= 1 ? 0 : 2;
}

int cmd_report_heatmap(const std::string& input, const std::string& output,
                       const std::string& title) {
  ScoreGrid grid;
  if (input.size() > 5 && input.substr(input.size() - 5) == ".json") {
    grid = import_json(input);
  } else {
    grid = import_csv(input, title.empty() ? std::filesystem::path(input).stem().string()
                                           : title);
  }
  if (!title.empty()) grid.case_name = title;
  export_svg(grid, output);
  std::printf("wrote %s\n", output.c_str());
  return 0;
}

int cmd_ppl_sweep(const std::vector<std::string>& corpus_paths, int synthetic_tokens,
                  const PplSweepConfig& cfg, const std::string& out_path) {
  Corpus corpus = synthetic_tokens > 0 ? Corpus{synthetic_corpus(synthetic_tokens), {}}
                                       : load_corpus(corpus_paths);
  auto rows = ppl_sweep(corpus, cfg);
  write_perplexity_csv(rows, out_path);
  std::printf("wrote %zu rows to %s\n", rows.size(), out_path.c_str());
  return 0;
}

int cmd_rope_fit(const std::string& input, int base_length, double tau,
                 const std::string& method_name, const std::string& out_path) {
  CliffMethod method = method_name == "second-diff" ? CliffMethod::second_diff
                                                    : CliffMethod::threshold;
  auto samples = read_perplexity_csv(input);
  RopeFitReport report = fit_from_samples(samples, base_length, tau, method);
  nlohmann::json j = fit_report_json(report);
  if (out_path.empty()) {
    std::cout << j.dump(2) << '\n';
  } else {
    std::ofstream out(out_path);
    if (!out) throw IoError("cannot write " + out_path);
    out << j.dump(2) << '\n';
    std::printf("wrote %s\n", out_path.c_str());
  }
  return 0;
}

int cmd_rope_alpha(double x, int target_length, int base_length, double beta) {
  if (x <= 0.0) {
    if (target_length <= 0 || base_length <= 0) {
      throw ConfigError("need either -x or --target-length with --base-length");
    }
    x = static_cast<double>(target_length) / base_length;
  }
  double alpha = dynamic_alpha(x, {beta});
  std::printf("%.2f\n", alpha);
  if (auto ref = static_alpha_reference(x)) {
    std::printf("# static reference alpha at x=%g: %.2f\n", x, *ref);
  }
  return 0;
}

struct ModerateArgs {
  std::vector<std::string> corpus_paths;
  int synthetic_tokens = 0;
  std::string mode = "ban";
  std::vector<std::string> ban;
  std::string redirect_phrase;
  double lambda = 0.75;
  int n = 10;
  int max_rounds = 4;
  int max_tokens = 60;
  double temperature = 0.0;
  long long seed = 0;
  std::string prompt;
  std::string events_path;
  int main_order = 3;
  int draft_order = 2;
  double smoothing_k = 0.05;
};

int cmd_moderate_demo(const ModerateArgs& args) {
  Corpus corpus = args.synthetic_tokens > 0
                      ? Corpus{synthetic_corpus(args.synthetic_tokens), {}}
                      : load_corpus(args.corpus_paths);

  ModerationPolicy policy;
  policy.banned_keywords = args.ban;
  if (!args.redirect_phrase.empty()) policy.redirect_phrase = args.redirect_phrase;
  policy.lambda = args.lambda;
  policy.thought_horizon = args.n;
  policy.max_rounds = args.max_rounds;

  SamplerMode mode;
  if (args.mode == "ban") {
    mode = SamplerMode::ban;
  } else if (args.mode == "redirect") {
    mode = SamplerMode::redirect;
  } else if (args.mode == "thought-gate") {
    mode = SamplerMode::thought_gate;
  } else if (args.mode == "none") {
    mode = SamplerMode::none;
  } else {
    throw ConfigError("mode must be ban, redirect, thought-gate or none");
  }

  // The redirect phrase trains into the vocabulary so the model can condition
  // on it after a substitution.
  std::string training = corpus.text + "\n" + policy.redirect_phrase;
  if (!args.prompt.empty()) training += "\n" + args.prompt;
  auto tokenizer = std::make_shared<Tokenizer>(Tokenizer::train(training));
  NGramLM main_lm = train_ngram(tokenizer, corpus, args.main_order, args.smoothing_k);
  NGramLM draft_lm = train_ngram(tokenizer, corpus, args.draft_order, args.smoothing_k);

  std::string prompt = args.prompt.empty() ? take_tokens(corpus, 12) : args.prompt;
  GenerationOutput out = run_moderated_generation(main_lm, draft_lm, prompt, policy, mode,
                                                  args.max_tokens,
                                                  static_cast<std::uint64_t>(args.seed),
                                                  args.temperature);

  std::printf("prompt: %s\n", prompt.c_str());
  std::printf("output: %s\n", out.text.c_str());
  std::printf("events: %zu, throughput: %.1f t/s%s\n", out.events.size(),
              out.tokens_per_second, out.gate_exhausted ? " (gate exhausted)" : "");
  for (const auto& ev : out.events) {
    std::printf("  step %-4d %-8s keyword=%s implicated=%zu\n", ev.step,
                event_kind_name(ev.kind), ev.keyword.c_str(), ev.implicated_tokens.size());
  }
  if (!args.events_path.empty()) {
    std::ofstream ev_out(args.events_path);
    if (!ev_out) throw IoError("cannot write " + args.events_path);
    for (const auto& ev : out.events) {
      nlohmann::json j{{"step", ev.step},
                       {"kind", event_kind_name(ev.kind)},
                       {"keyword", ev.keyword},
                       {"implicated_tokens", ev.implicated_tokens}};
      ev_out << j.dump() << '\n';
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"instruction-override benchmark harness and moderation toolkit"};
  app.require_subcommand(1);

  // bench
  auto* bench = app.add_subcommand("bench", "run or re-judge override benchmarks");
  bench->require_subcommand(1);

  BenchRunArgs run_args;
  auto* bench_run = bench->add_subcommand("run", "expand the grid and drive an endpoint");
  bench_run->add_option("--config", run_args.config_path, "declarative run config file");
  bench_run->add_option("--corpus", run_args.corpus_paths, "corpus file(s) or directory(ies)");
  bench_run->add_option("--synthetic-corpus", run_args.synthetic_tokens,
                        "generate N tokens of filler instead of loading a corpus");
  bench_run->add_option("--out", run_args.output_dir, "output directory");
  bench_run->add_option("--cases", run_args.cases, "test case names to run");
  bench_run->add_option("--endpoint", run_args.endpoint_kind, "local or remote");
  bench_run->add_option("--base-url", run_args.base_url, "remote base URL (.../v1)");
  bench_run->add_option("--model", run_args.model_name, "model name tag");
  bench_run->add_option("--max-tokens", run_args.max_tokens, "completion token budget");
  bench_run->add_option("--parallelism", run_args.parallelism, "in-flight requests");
  bench_run->add_option("--seed", run_args.seed, "run seed");
  bench_run->add_option("--grid-lengths", run_args.grid_lengths, "explicit context lengths");
  bench_run->add_option("--grid-depths", run_args.grid_depths, "explicit depth fractions");
  bench_run->add_flag("--snap-sentence", run_args.snap_sentence,
                      "snap needle placement to sentence boundaries");
  bench_run->add_flag("--export-prompts", run_args.export_prompts,
                      "also write the expanded prompts as prompts.jsonl");
  bench_run->add_flag("--dry-run", run_args.dry_run,
                      "export prompts and exit without driving the endpoint");

  std::string judge_transcript, judge_out = "out", judge_config;
  std::vector<std::string> judge_cases;
  auto* bench_judge = bench->add_subcommand("judge", "re-judge a recorded transcript");
  bench_judge->add_option("--transcript", judge_transcript, "JSON-lines transcript")
      ->required();
  bench_judge->add_option("--out", judge_out, "output directory");
  bench_judge->add_option("--config", judge_config, "config with case overrides");
  bench_judge->add_option("--cases", judge_cases, "test case names to judge");

  // report
  auto* report = app.add_subcommand("report", "render reports from score grids");
  report->require_subcommand(1);
  std::string heat_in, heat_out = "heatmap.svg", heat_title;
  auto* heatmap = report->add_subcommand("heatmap", "render a grid CSV/JSON as an SVG heatmap");
  heatmap->add_option("--in", heat_in, "grid .csv or .json")->required();
  heatmap->add_option("--out", heat_out, "output SVG path");
  heatmap->add_option("--title", heat_title, "heatmap title");

  // ppl
  auto* ppl = app.add_subcommand("ppl", "perplexity measurements");
  ppl->require_subcommand(1);
  std::vector<std::string> sweep_corpus;
  int sweep_synthetic = 0;
  PplSweepConfig sweep_cfg;
  std::vector<double> sweep_alphas;
  std::string sweep_out = "ppl_sweep.csv";
  auto* sweep = ppl->add_subcommand("sweep", "perplexity over lengths and alpha labels");
  sweep->add_option("--corpus", sweep_corpus, "corpus file(s) or directory(ies)");
  sweep->add_option("--synthetic-corpus", sweep_synthetic, "generate N tokens of filler");
  sweep->add_option("--order", sweep_cfg.order, "n-gram order");
  sweep->add_option("--smoothing-k", sweep_cfg.smoothing_k, "add-k smoothing");
  sweep->add_option("--lengths", sweep_cfg.lengths, "context lengths (tokens)")->required();
  sweep->add_option("--alphas", sweep_alphas, "alpha labels for the rows");
  sweep->add_option("--holdout", sweep_cfg.holdout_strings, "held-out strings per cell");
  sweep->add_option("--model-tag", sweep_cfg.model_tag, "model tag for the CSV");
  sweep->add_option("--out", sweep_out, "output CSV path");

  // rope
  auto* rope = app.add_subcommand("rope", "perplexity-cliff alpha planning");
  rope->require_subcommand(1);

  std::string fit_in, fit_method = "threshold", fit_out;
  int fit_base = 4096;
  double fit_tau = 0.25;
  auto* rope_fit = rope->add_subcommand("fit", "detect cliffs and fit the alpha quadratic");
  rope_fit->add_option("--in", fit_in, "perplexity CSV")->required();
  rope_fit->add_option("--base-length", fit_base, "base model context length");
  rope_fit->add_option("--tau", fit_tau, "cliff threshold");
  rope_fit->add_option("--method", fit_method, "threshold or second-diff");
  rope_fit->add_option("--out", fit_out, "report JSON path (stdout if omitted)");

  double alpha_x = 0.0, alpha_beta = 1.0;
  int alpha_target = 0, alpha_base = 0;
  auto* rope_alpha = rope->add_subcommand("alpha", "compute the dynamic alpha for a ratio");
  rope_alpha->add_option("-x", alpha_x, "context ratio target/base");
  rope_alpha->add_option("--target-length", alpha_target, "target context length");
  rope_alpha->add_option("--base-length", alpha_base, "base model context length");
  rope_alpha->add_option("--beta", alpha_beta, "dynamic scale multiplier");

  // moderate
  auto* moderate = app.add_subcommand("moderate", "output moderation demos");
  moderate->require_subcommand(1);
  ModerateArgs mod_args;
  auto* demo = moderate->add_subcommand("demo", "moderated generation with the toy model");
  demo->add_option("--corpus", mod_args.corpus_paths, "corpus file(s) or directory(ies)");
  demo->add_option("--synthetic-corpus", mod_args.synthetic_tokens,
                   "generate N tokens of filler");
  demo->add_option("--mode", mod_args.mode, "ban, redirect, thought-gate or none");
  demo->add_option("--ban", mod_args.ban, "banned keyword(s)");
  demo->add_option("--redirect-phrase", mod_args.redirect_phrase, "substitution phrase");
  demo->add_option("--lambda", mod_args.lambda, "inhibition strength in [0,1]");
  demo->add_option("--n", mod_args.n, "thought horizon");
  demo->add_option("--max-rounds", mod_args.max_rounds, "re-draft limit per step");
  demo->add_option("--max-tokens", mod_args.max_tokens, "generation budget");
  demo->add_option("--temperature", mod_args.temperature, "sampling temperature");
  demo->add_option("--seed", mod_args.seed, "sampling seed");
  demo->add_option("--prompt", mod_args.prompt, "prompt text");
  demo->add_option("--events", mod_args.events_path, "JSON-lines event log path");
  demo->add_option("--main-order", mod_args.main_order, "main model n-gram order");
  demo->add_option("--draft-order", mod_args.draft_order, "draft model n-gram order");
  demo->add_option("--smoothing-k", mod_args.smoothing_k, "add-k smoothing");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (bench_run->parsed()) return cmd_bench_run(run_args);
    if (bench_judge->parsed()) {
      return cmd_bench_judge(judge_transcript, judge_out, judge_config, judge_cases);
    }
    if (heatmap->parsed()) return cmd_report_heatmap(heat_in, heat_out, heat_title);
    if (sweep->parsed()) {
      if (!sweep_alphas.empty()) sweep_cfg.alphas = sweep_alphas;
      return cmd_ppl_sweep(sweep_corpus, sweep_synthetic, sweep_cfg, sweep_out);
    }
    if (rope_fit->parsed()) return cmd_rope_fit(fit_in, fit_base, fit_tau, fit_method, fit_out);
    if (rope_alpha->parsed()) {
      return cmd_rope_alpha(alpha_x, alpha_target, alpha_base, alpha_beta);
    }
    if (demo->parsed()) return cmd_moderate_demo(mod_args);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 1;
}
