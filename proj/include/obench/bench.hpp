#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "obench/config.hpp"
#include "obench/corpus.hpp"
#include "obench/gateway.hpp"
#include "obench/harness.hpp"
#include "obench/judge.hpp"
#include "obench/ngram.hpp"
#include "obench/report.hpp"
#include "obench/rope.hpp"

namespace obench {

struct TranscriptEntry {
  std::string case_name;
  std::string endpoint;
  double depth = 0.0;
  int length = 0;
  std::string prompt;
  std::string response;
  double latency_s = 0.0;
  double tokens_per_second = 0.0;
  std::string status = "ok";
};

inline nlohmann::json transcript_json(const TranscriptEntry& t) {
  return {{"case", t.case_name},     {"endpoint", t.endpoint},
          {"depth", t.depth},        {"length", t.length},
          {"prompt", t.prompt},      {"response", t.response},
          {"latency_s", t.latency_s},{"tokens_per_second", t.tokens_per_second},
          {"status", t.status}};
}

inline std::vector<TranscriptEntry> read_transcripts(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingFile("cannot open transcript: " + path.string());
  std::vector<TranscriptEntry> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw IoError("transcript line " + std::to_string(lineno) + ": " + e.what());
    }
    TranscriptEntry t;
    t.case_name = j.value("case", "");
    t.endpoint = j.value("endpoint", "");
    t.depth = j.value("depth", 0.0);
    t.length = j.value("length", 0);
    t.prompt = j.value("prompt", "");
    t.response = j.value("response", "");
    t.latency_s = j.value("latency_s", 0.0);
    t.tokens_per_second = j.value("tokens_per_second", 0.0);
    t.status = j.value("status", "ok");
    out.push_back(std::move(t));
  }
  return out;
}

struct BenchResult {
  std::vector<ScoreGrid> grids;
  std::size_t ok_cells = 0;
  std::size_t error_cells = 0;
  std::filesystem::path output_dir;
  std::vector<std::filesystem::path> written;
};

namespace detail {

inline std::unique_ptr<Gateway> make_gateway(const RunConfig& rc, const Corpus& corpus,
                                             const std::vector<TestCase>& cases) {
  if (rc.endpoint.kind == EndpointConfig::Kind::remote) {
    return std::make_unique<RemoteGateway>(rc.endpoint);
  }
  auto tokenizer = std::make_shared<Tokenizer>(harness_tokenizer(corpus, cases));
  NGramLM lm = train_ngram(tokenizer, corpus, rc.local.main_order, rc.local.smoothing_k);
  return std::make_unique<LocalGateway>(std::move(lm), rc.endpoint);
}

inline void write_grid_files(const ScoreGrid& grid, const std::filesystem::path& dir,
                             BenchResult& result) {
  auto csv = dir / (grid.case_name + ".csv");
  auto json = dir / (grid.case_name + ".json");
  auto svg = dir / (grid.case_name + ".svg");
  export_csv(grid, csv);
  export_json(grid, json);
  export_svg(grid, svg);
  result.written.insert(result.written.end(), {csv, json, svg});
}

}  // namespace detail

// Audit export: every expanded prompt as one JSON line.
inline void export_prompts(const std::vector<PromptInstance>& instances,
                           const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& inst : instances) {
    nlohmann::json j{{"case", inst.test_case.name},
                     {"depth", inst.depth},
                     {"length", inst.context_len},
                     {"needle_token_offset", inst.needle_token_offset},
                     {"prompt", inst.full_prompt}};
    out << j.dump() << '\n';
  }
}

// Core bench loop: expand the grid, drive the gateway with bounded
// parallelism, judge every response, and write one CSV + JSON + SVG per case
// plus a JSON-lines transcript. Cells are keyed by their grid position, so
// completion order never changes the output.
inline BenchResult run_bench(const RunConfig& rc) {
  rc.validate();

  Corpus corpus = rc.synthetic_tokens > 0
                      ? Corpus{synthetic_corpus(rc.synthetic_tokens, rc.synthetic_seed), {}}
                      : load_corpus(rc.corpus_paths);
  std::vector<TestCase> cases = resolve_cases(rc);
  for (const auto& tc : cases) validate_test_case(tc);

  Tokenizer tokenizer = harness_tokenizer(corpus, cases);
  std::vector<PromptInstance> instances =
      expand_run(cases, rc.grid, corpus, tokenizer, rc.snap_sentence);

  std::unique_ptr<Gateway> gateway = detail::make_gateway(rc, corpus, cases);
  std::string endpoint = gateway->name();

  std::vector<ScoreCell> cells(instances.size());
  std::vector<TranscriptEntry> transcripts(instances.size());
  std::atomic<std::size_t> cursor{0};
  int workers = std::min<int>(rc.parallelism, static_cast<int>(instances.size()));
  workers = std::max(workers, 1);

  auto work = [&]() {
    for (;;) {
      std::size_t i = cursor.fetch_add(1);
      if (i >= instances.size()) return;
      const PromptInstance& inst = instances[i];
      TranscriptEntry& t = transcripts[i];
      t.case_name = inst.test_case.name;
      t.endpoint = endpoint;
      t.depth = inst.depth;
      t.length = inst.context_len;
      t.prompt = inst.full_prompt;
      ScoreCell cell;
      try {
        GenerationResult gen = gateway->generate(inst, rc.seed * 1000003ULL + i);
        cell = judge(gen.text, inst.test_case);
        t.response = gen.text;
        t.latency_s = gen.latency_s;
        t.tokens_per_second = gen.tokens_per_second.value_or(0.0);
      } catch (const GatewayError& e) {
        cell.case_name = inst.test_case.name;
        cell.status = CellStatus::error;
        cell.error_kind = e.kind_name();
        t.status = e.kind_name();
      }
      cell.endpoint = endpoint;
      cell.depth = inst.depth;
      cell.length = inst.context_len;
      cells[i] = std::move(cell);
    }
  };

  std::vector<std::thread> pool;
  for (int w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& th : pool) th.join();

  BenchResult result;
  result.output_dir = rc.output_dir;
  std::filesystem::create_directories(result.output_dir);

  {
    std::ofstream out(result.output_dir / "transcripts.jsonl");
    if (!out) throw IoError("cannot write transcripts.jsonl");
    for (const auto& t : transcripts) out << transcript_json(t).dump() << '\n';
    result.written.push_back(result.output_dir / "transcripts.jsonl");
  }

  std::string stamp = now_iso8601();
  for (const auto& tc : cases) {
    std::vector<ScoreCell> case_cells;
    for (const auto& cell : cells) {
      if (cell.case_name == tc.name) case_cells.push_back(cell);
    }
    ScoreGrid grid = assemble_grid(case_cells, stamp);
    for (const auto& [key, cell] : grid.cells) {
      if (cell.status == CellStatus::ok) {
        ++result.ok_cells;
      } else {
        ++result.error_cells;
      }
    }
    detail::write_grid_files(grid, result.output_dir, result);
    result.grids.push_back(std::move(grid));
  }
  return result;
}

// Re-judges recorded transcripts (e.g. from an earlier run or an external
// driver) against the named cases and writes the same grid files.
inline BenchResult judge_transcripts(const std::vector<TranscriptEntry>& transcripts,
                                     const std::vector<TestCase>& cases,
                                     const std::filesystem::path& output_dir) {
  BenchResult result;
  result.output_dir = output_dir;
  std::filesystem::create_directories(output_dir);
  std::string stamp = now_iso8601();
  for (const auto& tc : cases) {
    std::vector<ScoreCell> case_cells;
    for (const auto& t : transcripts) {
      if (t.case_name != tc.name) continue;
      ScoreCell cell;
      if (t.status == "ok") {
        cell = judge(t.response, tc);
      } else {
        cell.case_name = tc.name;
        cell.status = CellStatus::error;
        cell.error_kind = t.status;
      }
      cell.endpoint = t.endpoint;
      cell.depth = t.depth;
      cell.length = t.length;
      case_cells.push_back(std::move(cell));
    }
    if (case_cells.empty()) continue;
    ScoreGrid grid = assemble_grid(case_cells, stamp);
    for (const auto& [key, cell] : grid.cells) {
      if (cell.status == CellStatus::ok) {
        ++result.ok_cells;
      } else {
        ++result.error_cells;
      }
    }
    detail::write_grid_files(grid, output_dir, result);
    result.grids.push_back(std::move(grid));
  }
  if (result.grids.empty()) throw ConfigError("no transcript lines matched the selected cases");
  return result;
}

struct PplSweepConfig {
  int order = 3;
  double smoothing_k = 0.05;
  std::vector<int> lengths;
  std::vector<double> alphas{1.0};
  int holdout_strings = 10;
  double train_fraction = 0.8;
  std::string model_tag = "toy-ngram";
};

// Trains on the leading fraction of the corpus and reports, per (alpha,
// length), perplexity averaged over holdout_strings windows drawn evenly from
// the held-out remainder. The toy model has no positional state, so the
// alpha column only labels rows for downstream fitting tools.
inline std::vector<PerplexitySample> ppl_sweep(const Corpus& corpus,
                                               const PplSweepConfig& cfg) {
  if (cfg.lengths.empty()) throw ConfigError("ppl sweep needs at least one length");
  if (cfg.holdout_strings < 1) throw ConfigError("holdout_strings must be >= 1");

  auto segs = Tokenizer::segment(corpus.text);
  std::size_t total = segs.size();
  auto train_tokens = static_cast<std::size_t>(static_cast<double>(total) * cfg.train_fraction);
  if (train_tokens < static_cast<std::size_t>(cfg.order) || train_tokens >= total) {
    throw CorpusTooShort("corpus too short to split for a sweep");
  }

  Corpus train_part{corpus.text.substr(0, segs[train_tokens - 1].end), {}};
  auto tokenizer = std::make_shared<Tokenizer>(Tokenizer::train(corpus.text));
  NGramLM lm = train_ngram(tokenizer, train_part, cfg.order, cfg.smoothing_k);

  std::size_t holdout_begin = train_tokens;
  std::size_t holdout_count = total - holdout_begin;

  std::vector<PerplexitySample> rows;
  for (double alpha : cfg.alphas) {
    for (int length : cfg.lengths) {
      if (holdout_count < static_cast<std::size_t>(length)) {
        throw CorpusTooShort("holdout shorter than requested context length " +
                             std::to_string(length));
      }
      double acc = 0.0;
      std::size_t slots = holdout_count - static_cast<std::size_t>(length);
      for (int s = 0; s < cfg.holdout_strings; ++s) {
        std::size_t start =
            holdout_begin +
            (cfg.holdout_strings == 1
                 ? 0
                 : slots * static_cast<std::size_t>(s) /
                       static_cast<std::size_t>(cfg.holdout_strings - 1));
        const auto& first = segs[start];
        const auto& last = segs[start + static_cast<std::size_t>(length) - 1];
        std::string window = corpus.text.substr(first.begin, last.end - first.begin);
        acc += perplexity(lm, window);
      }
      PerplexitySample row;
      row.model_tag = cfg.model_tag;
      row.alpha = alpha;
      row.context_length = length;
      row.perplexity = acc / cfg.holdout_strings;
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

}  // namespace obench
