// Command-line front end: dataset synthesis, training, metric reports,
// activation-shape dumps and gradient checking.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "countgraph/countgraph.hpp"

namespace {

using countgraph::AnnotatedQuestion;

std::uint64_t default_seed() {
  if (const char* env = std::getenv("COUNTGRAPH_SEED")) {
    return std::strtoull(env, nullptr, 10);
  }
  return 0;
}

nlohmann::json load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path + ": cannot open config file");
  try {
    return nlohmann::json::parse(in);
  } catch (const std::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

// Config-file values fill in options the command line left untouched.
template <typename T>
void apply_config(const CLI::App& cmd, const nlohmann::json& config, const std::string& flag,
                  T& value) {
  const std::string key = flag.substr(2);
  if (cmd.count(flag) == 0 && config.contains(key)) {
    value = config.at(key).get<T>();
  }
}

std::string fmt(double v) { return nlohmann::json(v).dump(); }

int run_synth(const CLI::App& cmd, const nlohmann::json& config, countgraph::SynthConfig cfg,
              int count, std::string out) {
  apply_config(cmd, config, "--n", cfg.n);
  apply_config(cmd, config, "--max-objects", cfg.max_objects);
  apply_config(cmd, config, "--side", cfg.side);
  apply_config(cmd, config, "--dup-prob", cfg.dup_prob);
  apply_config(cmd, config, "--jitter", cfg.jitter);
  apply_config(cmd, config, "--q", cfg.attention_noise);
  apply_config(cmd, config, "--seed", cfg.seed);
  apply_config(cmd, config, "--count", count);
  apply_config(cmd, config, "--out", out);
  if (out.empty()) throw std::runtime_error("synth: --out is required");
  if (cmd.count("--max-objects") == 0 && !config.contains("max-objects")) {
    cfg.max_objects = std::min(cfg.max_objects, cfg.n);
  }

  countgraph::generate_dataset(cfg, count, out);
  std::cout << "wrote " << count << " scenes to " << out << "\n";
  return 0;
}

int run_train(const CLI::App& cmd, const nlohmann::json& config, countgraph::TrainConfig cfg,
              std::string train_path, std::string val_path, std::string checkpoint_path,
              std::string log_path) {
  apply_config(cmd, config, "--train", train_path);
  apply_config(cmd, config, "--val", val_path);
  apply_config(cmd, config, "--out", checkpoint_path);
  apply_config(cmd, config, "--log", log_path);
  apply_config(cmd, config, "--epochs", cfg.epochs);
  apply_config(cmd, config, "--theta", cfg.theta);
  apply_config(cmd, config, "--n", cfg.n);
  apply_config(cmd, config, "--seed", cfg.seed);
  apply_config(cmd, config, "--lr", cfg.lr);
  apply_config(cmd, config, "--half-life", cfg.half_life);
  apply_config(cmd, config, "--batch-size", cfg.batch_size);
  apply_config(cmd, config, "--segments", cfg.segments);
  if (config.contains("beta1")) cfg.beta1 = config.at("beta1").get<double>();
  if (config.contains("beta2")) cfg.beta2 = config.at("beta2").get<double>();
  if (config.contains("eps")) cfg.eps = config.at("eps").get<double>();
  if (train_path.empty() || val_path.empty()) {
    throw std::runtime_error("train: --train and --val are required");
  }
  if (checkpoint_path.empty()) throw std::runtime_error("train: --out is required");
  if (log_path.empty()) log_path = checkpoint_path + ".log.jsonl";

  const countgraph::TrainResult result =
      countgraph::run_training(train_path, val_path, cfg, checkpoint_path, log_path);

  const auto report = [](const countgraph::EpochMetrics& m) {
    std::cout << "epoch " << m.epoch << ": val_loss=" << fmt(m.val_loss)
              << " val_accuracy=" << fmt(m.val_accuracy) << "\n";
  };
  report(result.initial);
  for (const auto& m : result.epochs) report(m);
  std::cout << "checkpoint: " << checkpoint_path << "\nmetrics log: " << log_path << "\n";
  return 0;
}

nlohmann::ordered_json eval_report_json(const countgraph::Predictions& predictions,
                                        const std::vector<AnnotatedQuestion>& annotations) {
  const countgraph::CategoryReport report =
      countgraph::category_report(predictions, annotations);
  const countgraph::PairStats pairs_all = countgraph::balanced_pairs(predictions, annotations);
  const countgraph::PairStats pairs_number = countgraph::balanced_pairs(
      predictions, annotations,
      [](const AnnotatedQuestion& q) { return countgraph::is_number_question(q); });
  const countgraph::PairStats pairs_count = countgraph::balanced_pairs(
      predictions, annotations,
      [](const AnnotatedQuestion& q) { return countgraph::is_count_question(q.question); });

  nlohmann::ordered_json j;
  j["vqa_accuracy"] = {{"number", report.number.mean},
                       {"count", report.count.mean},
                       {"all", report.all.mean}};
  j["questions"] = {{"number", report.number.questions},
                    {"count", report.count.questions},
                    {"all", report.all.questions}};
  j["balanced_pair_accuracy"] = {{"number", pairs_number.accuracy()},
                                 {"count", pairs_count.accuracy()},
                                 {"all", pairs_all.accuracy()}};
  j["balanced_pairs"] = {{"number", pairs_number.pairs},
                         {"count", pairs_count.pairs},
                         {"all", pairs_all.pairs}};
  return j;
}

int run_eval(const CLI::App& cmd, const nlohmann::json& config, std::string predictions_path,
             std::string annotations_path, std::string format, std::string out) {
  apply_config(cmd, config, "--predictions", predictions_path);
  apply_config(cmd, config, "--annotations", annotations_path);
  apply_config(cmd, config, "--format", format);
  apply_config(cmd, config, "--out", out);
  if (predictions_path.empty() || annotations_path.empty()) {
    throw std::runtime_error("eval: --predictions and --annotations are required");
  }

  const countgraph::Predictions predictions = countgraph::read_predictions(predictions_path);
  const auto annotations = countgraph::read_annotations(annotations_path);
  const nlohmann::ordered_json report = eval_report_json(predictions, annotations);

  if (report["balanced_pairs"]["all"].get<int>() == 0) {
    std::cerr << "warning: annotation set contains no balanced pairs\n";
  }
  if (format == "json") {
    std::cout << report.dump(2) << "\n";
  } else {
    std::cout << std::left << std::setw(10) << "category" << std::setw(14) << "vqa_accuracy"
              << std::setw(12) << "questions" << std::setw(16) << "pair_accuracy"
              << "pairs\n";
    std::cout << std::fixed << std::setprecision(4);
    for (const char* category : {"number", "count", "all"}) {
      std::cout << std::left << std::setw(10) << category << std::setw(14)
                << report["vqa_accuracy"][category].get<double>() << std::setw(12)
                << report["questions"][category].get<int>() << std::setw(16)
                << report["balanced_pair_accuracy"][category].get<double>()
                << report["balanced_pairs"][category].get<int>() << "\n";
    }
  }
  if (!out.empty()) {
    std::ofstream file(out, std::ios::binary);
    if (!file) throw std::runtime_error(out + ": cannot open for writing");
    file << report.dump(2) << "\n";
  }
  return 0;
}

void write_function_svg(const std::string& path, const countgraph::CountParams& params,
                        int samples) {
  constexpr int kSize = 480;
  constexpr int kMargin = 40;
  constexpr double kPlot = kSize - 2.0 * kMargin;
  static const char* kColors[8] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                   "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
  std::ofstream svg(path, std::ios::binary);
  if (!svg) throw std::runtime_error(path + ": cannot open for writing");
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " << kSize << " " << kSize
      << "\">\n";
  svg << "  <rect x=\"" << kMargin << "\" y=\"" << kMargin << "\" width=\"" << kPlot
      << "\" height=\"" << kPlot << "\" fill=\"none\" stroke=\"#000\"/>\n";
  for (int k = 0; k < 8; ++k) {
    svg << "  <polyline fill=\"none\" stroke=\"" << kColors[k] << "\" points=\"";
    for (const auto& [x, y] : params.f[static_cast<std::size_t>(k)].sample(samples)) {
      const double px = kMargin + x * kPlot;
      const double py = kSize - kMargin - y * kPlot;
      svg << std::setprecision(2) << std::fixed << px << "," << py << " ";
    }
    svg << "\"/>\n";
    svg << "  <text x=\"" << kSize - kMargin + 4 << "\" y=\"" << kMargin + 16 * (k + 1)
        << "\" fill=\"" << kColors[k] << "\" font-size=\"12\">f" << k + 1 << "</text>\n";
  }
  svg << "</svg>\n";
}

int run_dump_functions(const CLI::App& cmd, const nlohmann::json& config,
                       std::string checkpoint_path, int samples, std::string out,
                       std::string svg) {
  apply_config(cmd, config, "--checkpoint", checkpoint_path);
  apply_config(cmd, config, "--k", samples);
  apply_config(cmd, config, "--out", out);
  apply_config(cmd, config, "--svg", svg);
  if (checkpoint_path.empty()) throw std::runtime_error("dump-functions: --checkpoint is required");
  if (out.empty()) throw std::runtime_error("dump-functions: --out is required");
  if (samples < 2) throw std::runtime_error("dump-functions: --k must be >= 2");

  const countgraph::Checkpoint ckpt = countgraph::load_checkpoint(checkpoint_path);
  std::ofstream csv(out, std::ios::binary);
  if (!csv) throw std::runtime_error(out + ": cannot open for writing");
  csv << "x,f1,f2,f3,f4,f5,f6,f7,f8\n";
  for (int i = 0; i < samples; ++i) {
    const double x = static_cast<double>(i) / (samples - 1);
    csv << fmt(x);
    for (const countgraph::Plf& f : ckpt.params.f) csv << "," << fmt(f.eval(x));
    csv << "\n";
  }
  if (!csv) throw std::runtime_error(out + ": write failed");
  if (!svg.empty()) write_function_svg(svg, ckpt.params, samples);
  std::cout << "wrote " << out << (svg.empty() ? "" : " and " + svg) << "\n";
  return 0;
}

int run_grad_check_cmd(const CLI::App& cmd, const nlohmann::json& config, int draws, int n,
                       int segments, double h, double tolerance, std::uint64_t seed) {
  apply_config(cmd, config, "--draws", draws);
  apply_config(cmd, config, "--n", n);
  apply_config(cmd, config, "--segments", segments);
  apply_config(cmd, config, "--step", h);
  apply_config(cmd, config, "--tolerance", tolerance);
  apply_config(cmd, config, "--seed", seed);

  const countgraph::GradCheckResult result =
      countgraph::run_grad_check(draws, n, segments, h, seed);
  std::cout << "draws=" << result.draws << " rejected=" << result.rejected
            << " max_rel_error=" << fmt(result.max_rel_error) << " worst_block="
            << result.worst_block << "\n";
  if (result.max_rel_error < tolerance) {
    std::cout << "PASS (tolerance " << fmt(tolerance) << ")\n";
    return 0;
  }
  std::cout << "FAIL (tolerance " << fmt(tolerance) << ")\n";
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Differentiable object counting from attention maps and box proposals"};
  app.require_subcommand(1);

  std::string config_path;

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic scene dataset");
  countgraph::SynthConfig synth_cfg;
  synth_cfg.seed = default_seed();
  int synth_count = 1000;
  std::string synth_out;
  synth->add_option("--config", config_path, "JSON config file; flags override its values");
  synth->add_option("--n", synth_cfg.n, "Proposals per scene")->check(CLI::PositiveNumber);
  synth->add_option("--max-objects", synth_cfg.max_objects, "Largest true count");
  synth->add_option("--side", synth_cfg.side, "Object square side in [0.05, 0.5]");
  synth->add_option("--dup-prob", synth_cfg.dup_prob, "Chance of a duplicate proposal");
  synth->add_option("--jitter", synth_cfg.jitter, "Corner noise amplitude");
  synth->add_option("--q", synth_cfg.attention_noise, "Attention noise in [0,1]");
  synth->add_option("--seed", synth_cfg.seed, "RNG seed");
  synth->add_option("--count", synth_count, "Number of scenes")->check(CLI::PositiveNumber);
  synth->add_option("--out", synth_out, "Output JSONL path");

  // train
  auto* train = app.add_subcommand("train", "Train the counting module on JSONL datasets");
  countgraph::TrainConfig train_cfg;
  train_cfg.seed = default_seed();
  std::string train_path;
  std::string val_path;
  std::string checkpoint_out;
  std::string log_out;
  train->add_option("--config", config_path, "JSON config file; flags override its values");
  train->add_option("--train", train_path, "Training JSONL path");
  train->add_option("--val", val_path, "Validation JSONL path");
  train->add_option("--out", checkpoint_out, "Checkpoint output path");
  train->add_option("--log", log_out, "Metrics log output path (JSONL)");
  train->add_option("--epochs", train_cfg.epochs, "Training epochs")
      ->check(CLI::NonNegativeNumber);
  train->add_option("--theta", train_cfg.theta, "Confidence center in (0,1)");
  train->add_option("--n", train_cfg.n, "Proposals per scene")->check(CLI::PositiveNumber);
  train->add_option("--seed", train_cfg.seed, "RNG seed");
  train->add_option("--lr", train_cfg.lr, "Initial learning rate");
  train->add_option("--half-life", train_cfg.half_life, "Iterations per LR halving");
  train->add_option("--batch-size", train_cfg.batch_size, "Mini-batch size")
      ->check(CLI::PositiveNumber);
  train->add_option("--segments", train_cfg.segments, "Plf segment count")
      ->check(CLI::PositiveNumber);

  // eval
  auto* eval = app.add_subcommand("eval", "Score predictions against annotations");
  std::string predictions_path;
  std::string annotations_path;
  std::string eval_format = "table";
  std::string eval_out;
  eval->add_option("--config", config_path, "JSON config file; flags override its values");
  eval->add_option("--predictions", predictions_path, "Predictions JSONL path");
  eval->add_option("--annotations", annotations_path, "Annotations JSONL path");
  eval->add_option("--format", eval_format, "table or json")
      ->check(CLI::IsMember({"table", "json"}));
  eval->add_option("--out", eval_out, "Also write the JSON report here");

  // dump-functions
  auto* dump = app.add_subcommand("dump-functions",
                                  "Dump the eight activation shapes as CSV (and SVG)");
  std::string dump_checkpoint;
  int dump_k = 101;
  std::string dump_out;
  std::string dump_svg;
  dump->add_option("--config", config_path, "JSON config file; flags override its values");
  dump->add_option("--checkpoint", dump_checkpoint, "Checkpoint path");
  dump->add_option("--k", dump_k, "Samples per function")->check(CLI::PositiveNumber);
  dump->add_option("--out", dump_out, "CSV output path");
  dump->add_option("--svg", dump_svg, "Optional SVG output path");

  // grad-check
  auto* gradcheck = app.add_subcommand("grad-check",
                                       "Compare analytic gradients with finite differences");
  int gc_draws = 50;
  int gc_n = 10;
  int gc_segments = 16;
  double gc_h = 1e-6;
  double gc_tolerance = 1e-4;
  std::uint64_t gc_seed = default_seed();
  gradcheck->add_option("--config", config_path, "JSON config file; flags override its values");
  gradcheck->add_option("--draws", gc_draws, "Random draws")->check(CLI::PositiveNumber);
  gradcheck->add_option("--n", gc_n, "Proposals per scene")->check(CLI::PositiveNumber);
  gradcheck->add_option("--segments", gc_segments, "Plf segment count")
      ->check(CLI::PositiveNumber);
  gradcheck->add_option("--step", gc_h, "Finite-difference step");
  gradcheck->add_option("--tolerance", gc_tolerance, "Max relative error accepted");
  gradcheck->add_option("--seed", gc_seed, "RNG seed");

  CLI11_PARSE(app, argc, argv);

  try {
    nlohmann::json config;
    if (!config_path.empty()) config = load_config_file(config_path);

    if (synth->parsed()) {
      return run_synth(*synth, config, synth_cfg, synth_count, synth_out);
    }
    if (train->parsed()) {
      return run_train(*train, config, train_cfg, train_path, val_path, checkpoint_out,
                       log_out);
    }
    if (eval->parsed()) {
      return run_eval(*eval, config, predictions_path, annotations_path, eval_format,
                      eval_out);
    }
    if (dump->parsed()) {
      return run_dump_functions(*dump, config, dump_checkpoint, dump_k, dump_out, dump_svg);
    }
    if (gradcheck->parsed()) {
      return run_grad_check_cmd(*gradcheck, config, gc_draws, gc_n, gc_segments, gc_h,
                                gc_tolerance, gc_seed);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
