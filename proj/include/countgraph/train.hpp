#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "countgraph/counting.hpp"
#include "countgraph/rng.hpp"
#include "countgraph/scene_io.hpp"

namespace countgraph {

struct TrainConfig {
  double lr = 1.5e-3;
  double half_life = 50000.0;  ///< iterations per halving of the learning rate
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int epochs = 30;
  int batch_size = 32;
  std::uint64_t seed = 0;
  double theta = 0.5;
  int n = 10;        ///< proposals per scene
  int segments = 16; ///< Plf resolution
};

inline void validate(const TrainConfig& cfg) {
  if (!(cfg.lr > 0.0)) throw std::invalid_argument("train: lr must be > 0");
  if (!(cfg.half_life > 0.0)) throw std::invalid_argument("train: half_life must be > 0");
  if (cfg.batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (cfg.epochs < 0) throw std::invalid_argument("train: epochs must be >= 0");
  if (cfg.n < 1) throw std::invalid_argument("train: n must be >= 1");
  if (cfg.segments < 1) throw std::invalid_argument("train: segments must be >= 1");
  if (!(cfg.theta > 0.0 && cfg.theta < 1.0)) {
    throw std::invalid_argument("train: theta must lie in (0,1)");
  }
}

/// Cross-entropy of softmax(gated_output) against the true count index.
/// The counting head is supervised directly: its output vector doubles as
/// the classification logits.
inline double loss_ce(const Eigen::VectorXd& gated_output, int true_count) {
  const Eigen::Index size = gated_output.size();
  if (true_count < 0 || true_count >= size) {
    throw std::invalid_argument("loss_ce: true_count outside 0..n");
  }
  const double peak = gated_output.maxCoeff();
  double total = 0.0;
  for (Eigen::Index k = 0; k < size; ++k) total += std::exp(gated_output[k] - peak);
  return std::log(total) - (gated_output[true_count] - peak);
}

/// d loss_ce / d gated_output = softmax(gated_output) - onehot(true_count).
inline Eigen::VectorXd loss_ce_grad(const Eigen::VectorXd& gated_output, int true_count) {
  const Eigen::Index size = gated_output.size();
  if (true_count < 0 || true_count >= size) {
    throw std::invalid_argument("loss_ce_grad: true_count outside 0..n");
  }
  const double peak = gated_output.maxCoeff();
  Eigen::VectorXd g(size);
  double total = 0.0;
  for (Eigen::Index k = 0; k < size; ++k) {
    g[k] = std::exp(gated_output[k] - peak);
    total += g[k];
  }
  g /= total;
  g[true_count] -= 1.0;
  return g;
}

/// First and second Adam moments for the eight Plf raw-weight vectors,
/// plus the shared iteration counter.
struct AdamState {
  std::array<std::vector<double>, 8> m;
  std::array<std::vector<double>, 8> v;
  std::int64_t iter = 0;

  static AdamState zeros(const CountParams& params) {
    AdamState state;
    for (std::size_t k = 0; k < 8; ++k) {
      state.m[k].assign(params.f[k].raw_weights().size(), 0.0);
      state.v[k].assign(params.f[k].raw_weights().size(), 0.0);
    }
    return state;
  }
};

/// Continuous half-life decay: lr * 0.5^(t / half_life).
inline double lr_at(const TrainConfig& cfg, std::int64_t t) {
  return cfg.lr * std::pow(0.5, static_cast<double>(t) / cfg.half_life);
}

/// One Adam update with bias correction over all Plf raw weights.
/// Increments state.iter; theta is configuration, not optimized.
inline void adam_step(CountParams& params, const CountGrads& grads, AdamState& state,
                      const TrainConfig& cfg) {
  state.iter += 1;
  const auto t = static_cast<double>(state.iter);
  const double rate = lr_at(cfg, state.iter);
  const double bias1 = 1.0 - std::pow(cfg.beta1, t);
  const double bias2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t k = 0; k < 8; ++k) {
    std::vector<double> raw = params.f[k].raw_weights();
    for (std::size_t w = 0; w < raw.size(); ++w) {
      const double g = grads.plf_weights[k][w];
      state.m[k][w] = cfg.beta1 * state.m[k][w] + (1.0 - cfg.beta1) * g;
      state.v[k][w] = cfg.beta2 * state.v[k][w] + (1.0 - cfg.beta2) * g * g;
      const double m_hat = state.m[k][w] / bias1;
      const double v_hat = state.v[k][w] / bias2;
      raw[w] -= rate * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
    params.f[k] = Plf(std::move(raw));
  }
}

/// Integer count read off a forward pass: nearest index to the clamped
/// count estimate.
inline int predicted_count(const ForwardTrace& trace, int n) {
  const double c = std::clamp(trace.count, 0.0, static_cast<double>(n));
  return static_cast<int>(std::lround(c));
}

struct EvalMetrics {
  double loss = 0.0;
  double accuracy = 0.0;  ///< exact-match count accuracy
};

inline EvalMetrics evaluate(const CountParams& params, const std::vector<Scene>& scenes,
                            int n) {
  if (scenes.empty()) throw std::invalid_argument("evaluate: empty scene set");
  EvalMetrics metrics;
  int correct = 0;
  for (const Scene& scene : scenes) {
    if (!scene.true_count) throw std::invalid_argument("evaluate: scene lacks true_count");
    const ForwardTrace trace = forward(params, scene);
    metrics.loss += loss_ce(trace.gated_output, *scene.true_count);
    if (predicted_count(trace, n) == *scene.true_count) ++correct;
  }
  metrics.loss /= static_cast<double>(scenes.size());
  metrics.accuracy = static_cast<double>(correct) / static_cast<double>(scenes.size());
  return metrics;
}

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

struct Checkpoint {
  int format_version = 1;
  CountParams params;
  AdamState adam;
  TrainConfig config;
};

inline nlohmann::ordered_json config_to_json(const TrainConfig& cfg) {
  nlohmann::ordered_json j;
  j["lr"] = cfg.lr;
  j["half_life"] = cfg.half_life;
  j["beta1"] = cfg.beta1;
  j["beta2"] = cfg.beta2;
  j["eps"] = cfg.eps;
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["seed"] = cfg.seed;
  j["theta"] = cfg.theta;
  j["n"] = cfg.n;
  j["segments"] = cfg.segments;
  return j;
}

inline TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  cfg.lr = j.at("lr").get<double>();
  cfg.half_life = j.at("half_life").get<double>();
  cfg.beta1 = j.at("beta1").get<double>();
  cfg.beta2 = j.at("beta2").get<double>();
  cfg.eps = j.at("eps").get<double>();
  cfg.epochs = j.at("epochs").get<int>();
  cfg.batch_size = j.at("batch_size").get<int>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  cfg.theta = j.at("theta").get<double>();
  cfg.n = j.at("n").get<int>();
  cfg.segments = j.at("segments").get<int>();
  return cfg;
}

inline nlohmann::ordered_json checkpoint_to_json(const Checkpoint& ckpt) {
  nlohmann::ordered_json j;
  j["version"] = ckpt.format_version;
  j["theta"] = ckpt.params.theta;
  auto plfs = nlohmann::ordered_json::array();
  for (const Plf& f : ckpt.params.f) {
    nlohmann::ordered_json p;
    p["d"] = f.segments();
    p["raw_weights"] = f.raw_weights();
    plfs.push_back(std::move(p));
  }
  j["plfs"] = std::move(plfs);
  nlohmann::ordered_json adam;
  adam["m"] = ckpt.adam.m;
  adam["v"] = ckpt.adam.v;
  j["adam"] = std::move(adam);
  j["iter"] = ckpt.adam.iter;
  j["config"] = config_to_json(ckpt.config);
  return j;
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  const int version = j.at("version").get<int>();
  if (version != 1) {
    throw std::invalid_argument("checkpoint: unsupported format version " +
                                std::to_string(version));
  }
  const auto& plfs = j.at("plfs");
  if (plfs.size() != 8) throw std::invalid_argument("checkpoint: expected 8 plfs");

  std::vector<Plf> functions;
  functions.reserve(8);
  for (const auto& p : plfs) {
    auto raw = p.at("raw_weights").get<std::vector<double>>();
    if (p.at("d").get<int>() != static_cast<int>(raw.size())) {
      throw std::invalid_argument("checkpoint: plf segment count mismatch");
    }
    functions.emplace_back(std::move(raw));
  }
  CountParams params{{functions[0], functions[1], functions[2], functions[3],
                      functions[4], functions[5], functions[6], functions[7]},
                     j.at("theta").get<double>()};

  Checkpoint ckpt{version, params, AdamState::zeros(params), config_from_json(j.at("config"))};
  ckpt.adam.m = j.at("adam").at("m").get<std::array<std::vector<double>, 8>>();
  ckpt.adam.v = j.at("adam").at("v").get<std::array<std::vector<double>, 8>>();
  ckpt.adam.iter = j.at("iter").get<std::int64_t>();
  for (std::size_t k = 0; k < 8; ++k) {
    if (ckpt.adam.m[k].size() != params.f[k].raw_weights().size() ||
        ckpt.adam.v[k].size() != params.f[k].raw_weights().size()) {
      throw std::invalid_argument("checkpoint: adam moment shape mismatch");
    }
  }
  return ckpt;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
  out << checkpoint_to_json(ckpt).dump(2) << '\n';
  if (!out) throw std::runtime_error(path + ": write failed");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path + ": cannot open for reading");
  try {
    return checkpoint_from_json(nlohmann::json::parse(in));
  } catch (const std::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

struct TrainResult {
  Checkpoint checkpoint;
  EpochMetrics initial;             ///< epoch 0: evaluation before any update
  std::vector<EpochMetrics> epochs; ///< one record per training epoch
};

/// Deterministic training loop: identity-initialized parameters, shuffled
/// mini-batches with a fixed-order gradient reduction, Adam with
/// half-life learning-rate decay. Validation runs before training (epoch
/// 0) and after every epoch.
inline TrainResult train_loop(const std::vector<Scene>& train,
                              const std::vector<Scene>& val, const TrainConfig& cfg) {
  validate(cfg);
  if (train.empty()) throw std::invalid_argument("train_loop: empty training set");
  if (val.empty()) throw std::invalid_argument("train_loop: empty validation set");
  const auto check_scene = [&](const Scene& scene) {
    if (static_cast<int>(scene.boxes.size()) != cfg.n) {
      throw std::invalid_argument("train_loop: scene proposal count differs from config n");
    }
    if (!scene.true_count) throw std::invalid_argument("train_loop: scene lacks true_count");
  };
  for (const Scene& s : train) check_scene(s);
  for (const Scene& s : val) check_scene(s);

  TrainResult result;
  CountParams params = CountParams::identity(cfg.segments, cfg.theta);
  AdamState adam = AdamState::zeros(params);
  std::mt19937_64 rng(cfg.seed);

  {
    const EvalMetrics m = evaluate(params, val, cfg.n);
    result.initial = EpochMetrics{0, 0.0, m.loss, m.accuracy};
  }

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i + 1 < order.size(); ++i) {
      const std::size_t j = i + uniform_below(rng, order.size() - i);
      std::swap(order[i], order[j]);
    }

    double epoch_loss = 0.0;
    std::size_t cursor = 0;
    while (cursor < order.size()) {
      const std::size_t batch = std::min(static_cast<std::size_t>(cfg.batch_size),
                                         order.size() - cursor);
      CountGrads sum;
      for (std::size_t k = 0; k < 8; ++k) {
        sum.plf_weights[k].assign(params.f[k].raw_weights().size(), 0.0);
      }
      sum.attention = Eigen::VectorXd::Zero(cfg.n);
      for (std::size_t b = 0; b < batch; ++b) {
        const Scene& scene = train[order[cursor + b]];
        const ForwardTrace trace = forward(params, scene);
        epoch_loss += loss_ce(trace.gated_output, *scene.true_count);
        const Eigen::VectorXd d_out = loss_ce_grad(trace.gated_output, *scene.true_count);
        const CountGrads grads = backward(params, scene, trace, d_out);
        for (std::size_t k = 0; k < 8; ++k) {
          for (std::size_t w = 0; w < sum.plf_weights[k].size(); ++w) {
            sum.plf_weights[k][w] += grads.plf_weights[k][w];
          }
        }
      }
      const double inv = 1.0 / static_cast<double>(batch);
      for (std::size_t k = 0; k < 8; ++k) {
        for (double& g : sum.plf_weights[k]) g *= inv;
      }
      adam_step(params, sum, adam, cfg);
      cursor += batch;
    }

    const EvalMetrics m = evaluate(params, val, cfg.n);
    result.epochs.push_back(EpochMetrics{epoch, epoch_loss / static_cast<double>(train.size()),
                                         m.loss, m.accuracy});
  }

  result.checkpoint = Checkpoint{1, params, adam, cfg};
  return result;
}

inline nlohmann::ordered_json epoch_to_json(const EpochMetrics& m, bool trained) {
  nlohmann::ordered_json j;
  j["epoch"] = m.epoch;
  if (trained) j["train_loss"] = m.train_loss;
  j["val_loss"] = m.val_loss;
  j["val_accuracy"] = m.val_accuracy;
  return j;
}

/// File-level wrapper: reads JSONL datasets, trains, writes the
/// checkpoint and a JSONL metrics log (one line per epoch; a run with
/// zero epochs logs the single pre-training evaluation instead).
inline TrainResult run_training(const std::string& train_path, const std::string& val_path,
                                const TrainConfig& cfg, const std::string& checkpoint_path,
                                const std::string& log_path) {
  validate(cfg);
  const std::vector<Scene> train = read_scenes(train_path);
  const std::vector<Scene> val = read_scenes(val_path);
  TrainResult result = train_loop(train, val, cfg);

  save_checkpoint(checkpoint_path, result.checkpoint);

  std::ofstream log(log_path, std::ios::binary);
  if (!log) throw std::runtime_error(log_path + ": cannot open for writing");
  if (result.epochs.empty()) {
    log << epoch_to_json(result.initial, false).dump() << '\n';
  } else {
    for (const EpochMetrics& m : result.epochs) {
      log << epoch_to_json(m, true).dump() << '\n';
    }
  }
  if (!log) throw std::runtime_error(log_path + ": write failed");
  return result;
}

}  // namespace countgraph
