// picoframe: PICO frame extraction with retrieved in-context demonstrations.
//
//   picoframe convert --config run.json
//   picoframe index   --config run.json
//   picoframe extract --config run.json [--strategy knn|random|zero_shot] [--k N] [--offline]
//   picoframe eval    --predictions predictions.jsonl --gold test.conll [--out DIR]
//   picoframe ablate  --config run.json --k 0,1,3,5 --strategies knn,random
//   picoframe audit   --corpus test.conll
//
// Exit status: 0 clean, 1 usage, 2 data error, 3 gateway errors occurred.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "picoframe/runner.hpp"

namespace pf = picoframe;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitGateway = 3;

struct ConfigOverrides {
  std::string config;
  std::string out;
  std::string strategy;
  int k = -1;
  bool offline = false;
};

pf::ExperimentConfig load(const ConfigOverrides& o) {
  auto cfg = pf::load_config(o.config);
  if (!o.out.empty()) cfg.output_dir = o.out;
  if (!o.strategy.empty()) cfg.strategy = pf::parse_strategy(o.strategy);
  if (o.k >= 0) cfg.k = static_cast<std::size_t>(o.k);
  if (cfg.strategy == pf::Strategy::zero_shot) cfg.k = 0;
  if (o.offline) cfg.gateway.offline = true;
  cfg.validate();
  return cfg;
}

void print_gateway(const pf::GatewayStats& s) {
  std::cerr << "gateway: calls=" << s.backend_calls << " cache_hits=" << s.cache_hits
            << " cache_misses=" << s.cache_misses << " cache_corrupt=" << s.cache_corrupt
            << " errors=" << s.errors << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PICO frame extraction toolkit"};
  app.require_subcommand(1);

  ConfigOverrides overrides;

  auto* convert = app.add_subcommand("convert", "Convert a BIO corpus into instruction records");
  convert->add_option("--config", overrides.config, "Run config (JSON)")->required();
  convert->add_option("--out", overrides.out, "Output directory");

  auto* index = app.add_subcommand("index", "Build the demonstration index from training embeddings");
  index->add_option("--config", overrides.config, "Run config (JSON)")->required();
  index->add_option("--out", overrides.out, "Output directory");

  auto* extract = app.add_subcommand("extract", "Run k-shot extraction over the test split");
  extract->add_option("--config", overrides.config, "Run config or manifest (JSON)")->required();
  extract->add_option("--out", overrides.out, "Output directory");
  extract->add_option("--strategy", overrides.strategy, "knn | random | zero_shot");
  extract->add_option("--k", overrides.k, "Number of demonstrations");
  extract->add_flag("--offline", overrides.offline, "Serve from the response cache only");

  std::string predictions, gold, eval_out;
  bool kind_sensitive = false;
  auto* eval = app.add_subcommand("eval", "Score a predictions file against gold annotations");
  eval->add_option("--predictions", predictions, "Predictions file")->required();
  eval->add_option("--gold", gold, "Gold corpus (CoNLL or .jsonl records)")->required();
  eval->add_option("--out", eval_out, "Write report.json and report.txt here");
  eval->add_flag("--kind-sensitive", kind_sensitive, "Require matching B/I kinds");

  std::vector<std::size_t> k_values;
  std::vector<std::string> strategy_names{"knn", "random"};
  auto* ablate = app.add_subcommand("ablate", "Sweep k and selection strategy");
  ablate->add_option("--config", overrides.config, "Run config (JSON)")->required();
  ablate->add_option("--out", overrides.out, "Output directory");
  ablate->add_option("--k", k_values, "k values")->delimiter(',')->required();
  ablate->add_option("--strategies", strategy_names, "Strategies")->delimiter(',');
  ablate->add_flag("--offline", overrides.offline, "Serve from the response cache only");

  std::string audit_corpus;
  auto* audit = app.add_subcommand("audit", "List sentences whose gold spans cannot round-trip through generation");
  audit->add_option("--corpus", audit_corpus, "Corpus file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*convert) {
      auto cfg = load(overrides);
      auto r = pf::cmd_convert(cfg);
      for (const auto& [split, stats] : r.splits) {
        std::cout << pf::split_name(split) << ": " << stats.records << " records -> " << r.datasets.at(split).string()
                  << " (repairs=" << stats.repairs << ")\n";
        for (const auto& [label, n] : stats.spans) std::cout << "  " << label << ": " << n << " spans\n";
      }
      return 0;
    }
    if (*index) {
      auto cfg = load(overrides);
      auto r = pf::cmd_index(cfg);
      std::cout << "index: " << r.nodes << " nodes, dim " << r.dim << ", top level " << r.max_level
                << ", mean layer-0 degree " << r.mean_degree_layer0 << " -> " << r.path.string() << '\n';
      return 0;
    }
    if (*extract) {
      auto cfg = load(overrides);
      auto r = pf::cmd_extract(cfg);
      std::cout << pf::format_report(r.report, pf::LabelScheme::pico());
      std::cout << "predictions: " << r.predictions.string() << "\nmanifest: " << r.manifest.string() << '\n';
      print_gateway(r.gateway);
      return r.error_rows > 0 ? kExitGateway : 0;
    }
    if (*eval) {
      auto gold_corpus = pf::load_corpus(gold, pf::LabelScheme::pico(), pf::Split::test);
      auto report = pf::cmd_eval(predictions, gold_corpus.sentences, {kind_sensitive});
      if (!eval_out.empty()) pf::write_report(eval_out, report);
      std::cout << pf::format_report(report, pf::LabelScheme::pico());
      return 0;
    }
    if (*ablate) {
      auto cfg = load(overrides);
      std::vector<pf::Strategy> strategies;
      for (const auto& s : strategy_names) strategies.push_back(pf::parse_strategy(s));
      auto rows = pf::cmd_ablate(cfg, k_values, strategies);
      std::size_t errors = 0;
      std::printf("%-10s %4s %8s\n", "strategy", "k", "F1");
      for (const auto& row : rows) {
        std::printf("%-10s %4zu %8.2f\n", std::string(pf::strategy_name(row.strategy)).c_str(), row.k,
                    100.0 * row.macro.f1);
        errors += row.error_rows;
      }
      std::cout << "table: " << (cfg.output_dir / "ablation.csv").string() << '\n';
      return errors > 0 ? kExitGateway : 0;
    }
    if (*audit) {
      auto corpus = pf::load_corpus(audit_corpus, pf::LabelScheme::pico(), pf::Split::test);
      auto findings = pf::audit_corpus(corpus.sentences, pf::LabelScheme::pico());
      for (const auto& f : findings) std::cout << f.sentence_id << '\t' << f.reason << '\n';
      std::cerr << findings.size() << " of " << corpus.sentences.size() << " sentences fail the round trip\n";
      return findings.empty() ? 0 : kExitData;
    }
  } catch (const pf::UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const pf::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
