#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <catch2/catch_amalgamated.hpp>

#include "countgraph/fusion.hpp"
#include "countgraph/synth.hpp"
#include "countgraph/train.hpp"

using namespace countgraph;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("countgraph_train_" + std::to_string(::getpid()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

Eigen::VectorXd one_hot(int size, int index) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(size);
  v[index] = 1.0;
  return v;
}

}  // namespace

TEST_CASE("cross entropy of a one-hot output") {
  // softmax picks e / (e + 4) at the true index
  CHECK(loss_ce(one_hot(5, 2), 2) == Catch::Approx(0.904832441554448).epsilon(1e-12));
}

TEST_CASE("cross entropy of a uniform output is log(n+1)") {
  CHECK(loss_ce(Eigen::VectorXd::Constant(5, 0.2), 3) ==
        Catch::Approx(std::log(5.0)).epsilon(1e-12));
}

TEST_CASE("cross entropy rejects out-of-range labels") {
  CHECK_THROWS_AS(loss_ce(one_hot(5, 2), 5), std::invalid_argument);
  CHECK_THROWS_AS(loss_ce(one_hot(5, 2), -1), std::invalid_argument);
}

TEST_CASE("cross-entropy gradient matches finite differences") {
  std::mt19937_64 rng(301);
  const double h = 1e-7;
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::VectorXd o(6);
    for (int i = 0; i < 6; ++i) o[i] = u01(rng);
    const int label = static_cast<int>(uniform_below(rng, 6));
    const Eigen::VectorXd grad = loss_ce_grad(o, label);
    for (int i = 0; i < 6; ++i) {
      Eigen::VectorXd bumped = o;
      bumped[i] = o[i] + h;
      const double up = loss_ce(bumped, label);
      bumped[i] = o[i] - h;
      const double down = loss_ce(bumped, label);
      const double fd = (up - down) / (2.0 * h);
      CHECK(grad[i] == Catch::Approx(fd).margin(1e-6).epsilon(1e-6));
    }
  }
}

TEST_CASE("learning rate halves every half_life iterations") {
  TrainConfig cfg;
  cfg.lr = 0.02;
  cfg.half_life = 250.0;
  CHECK(lr_at(cfg, 0) == 0.02);
  CHECK(lr_at(cfg, 250) == Catch::Approx(0.01).epsilon(1e-12));
  CHECK(lr_at(cfg, 500) == Catch::Approx(0.005).epsilon(1e-12));
  double prev = lr_at(cfg, 0);
  for (int t = 1; t < 1000; t += 7) {
    const double cur = lr_at(cfg, t);
    CHECK(cur <= prev);
    prev = cur;
  }
}

TEST_CASE("adam leaves parameters alone under zero gradient and decays moments") {
  TrainConfig cfg;
  cfg.lr = 0.01;
  CountParams params = CountParams::identity(4);
  AdamState state = AdamState::zeros(params);

  CountGrads grads;
  for (std::size_t k = 0; k < 8; ++k) grads.plf_weights[k].assign(4, 0.0);
  grads.attention = Eigen::VectorXd::Zero(1);

  grads.plf_weights[0][0] = 1.0;
  adam_step(params, grads, state, cfg);
  const double m_after_push = state.m[0][0];
  REQUIRE(m_after_push > 0.0);

  const std::vector<double> raw_before = params.f[0].raw_weights();
  grads.plf_weights[0][0] = 0.0;
  adam_step(params, grads, state, cfg);
  CHECK(state.m[0][0] == Catch::Approx(cfg.beta1 * m_after_push).epsilon(1e-12));
  // first moment still nonzero, so the parameter may drift, but all
  // blocks with zero history stay put
  for (std::size_t k = 1; k < 8; ++k) {
    CHECK(params.f[k].raw_weights() == CountParams::identity(4).f[k].raw_weights());
  }
  CHECK(raw_before[1] == params.f[0].raw_weights()[1]);
}

TEST_CASE("adam minimizes a single-parameter quadratic") {
  TrainConfig cfg;
  cfg.lr = 0.05;
  cfg.half_life = 1e9;
  CountParams params = CountParams::identity(1);
  AdamState state = AdamState::zeros(params);

  CountGrads grads;
  for (std::size_t k = 0; k < 8; ++k) grads.plf_weights[k].assign(1, 0.0);
  grads.attention = Eigen::VectorXd::Zero(1);

  const double target = 3.0;
  double loss = 0.0;
  for (int t = 0; t < 2000; ++t) {
    const double w = params.f[0].raw_weights()[0];
    loss = (w - target) * (w - target);
    grads.plf_weights[0][0] = 2.0 * (w - target);
    adam_step(params, grads, state, cfg);
  }
  CHECK(loss < 1e-6);
}

TEST_CASE("gated fusion with identity projections") {
  FusionParams p{Eigen::MatrixXd::Identity(3, 3), Eigen::MatrixXd::Identity(3, 3)};
  Eigen::VectorXd x(3);
  x << -1.0, 0.5, 2.0;
  const Eigen::VectorXd out = gated_fusion(x, x, p);
  // the squared term cancels; ReLU(2x) remains
  CHECK(out[0] == 0.0);
  CHECK(out[1] == Catch::Approx(1.0));
  CHECK(out[2] == Catch::Approx(4.0));

  const Eigen::VectorXd zeros = Eigen::VectorXd::Zero(3);
  CHECK(gated_fusion(zeros, zeros, p).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("gated fusion rejects dimension mismatches") {
  FusionParams p{Eigen::MatrixXd::Identity(3, 3), Eigen::MatrixXd::Identity(3, 2)};
  CHECK_THROWS_AS(gated_fusion(Eigen::VectorXd::Zero(3), Eigen::VectorXd::Zero(3), p),
                  std::invalid_argument);
}

TEST_CASE("fusion gradients match finite differences") {
  std::mt19937_64 rng(303);
  const double h = 1e-6;
  for (int trial = 0; trial < 5; ++trial) {
    FusionParams p{Eigen::MatrixXd(2, 3), Eigen::MatrixXd(2, 4)};
    for (int i = 0; i < 2; ++i) {
      for (int j = 0; j < 3; ++j) p.w_x(i, j) = 2.0 * u01(rng) - 1.0;
      for (int j = 0; j < 4; ++j) p.w_y(i, j) = 2.0 * u01(rng) - 1.0;
    }
    Eigen::VectorXd x(3), y(4), d_out(2);
    for (int i = 0; i < 3; ++i) x[i] = 2.0 * u01(rng) - 1.0;
    for (int i = 0; i < 4; ++i) y[i] = 2.0 * u01(rng) - 1.0;
    for (int i = 0; i < 2; ++i) d_out[i] = 2.0 * u01(rng) - 1.0;

    // keep the ReLU kink away from the finite-difference window
    const Eigen::VectorXd sum = p.w_x * x + p.w_y * y;
    if (sum.cwiseAbs().minCoeff() < 1e-3) continue;

    const FusionGrads g = gated_fusion_backward(x, y, p, d_out);
    const auto loss = [&](const FusionParams& q, const Eigen::VectorXd& xv,
                          const Eigen::VectorXd& yv) {
      return d_out.dot(gated_fusion(xv, yv, q));
    };

    double worst = 0.0;
    const auto update_worst = [&worst](double analytic, double fd) {
      worst = std::max(worst, std::abs(analytic - fd) /
                                  std::max({1e-6, std::abs(analytic), std::abs(fd)}));
    };
    for (int i = 0; i < 2; ++i) {
      for (int j = 0; j < 3; ++j) {
        FusionParams q = p;
        q.w_x(i, j) = p.w_x(i, j) + h;
        const double up = loss(q, x, y);
        q.w_x(i, j) = p.w_x(i, j) - h;
        update_worst(g.w_x(i, j), (up - loss(q, x, y)) / (2.0 * h));
      }
      for (int j = 0; j < 4; ++j) {
        FusionParams q = p;
        q.w_y(i, j) = p.w_y(i, j) + h;
        const double up = loss(q, x, y);
        q.w_y(i, j) = p.w_y(i, j) - h;
        update_worst(g.w_y(i, j), (up - loss(q, x, y)) / (2.0 * h));
      }
    }
    for (int i = 0; i < 3; ++i) {
      Eigen::VectorXd xv = x;
      xv[i] = x[i] + h;
      const double up = loss(p, xv, y);
      xv[i] = x[i] - h;
      update_worst(g.x[i], (up - loss(p, xv, y)) / (2.0 * h));
    }
    for (int i = 0; i < 4; ++i) {
      Eigen::VectorXd yv = y;
      yv[i] = y[i] + h;
      const double up = loss(p, x, yv);
      yv[i] = y[i] - h;
      update_worst(g.y[i], (up - loss(p, x, yv)) / (2.0 * h));
    }
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("one training epoch produces one metrics record") {
  TempDir dir;
  SynthConfig synth;
  synth.n = 6;
  synth.max_objects = 4;
  synth.attention_noise = 0.2;
  synth.seed = 11;
  generate_dataset(synth, 10, dir.file("train.jsonl"));
  synth.seed = 12;
  generate_dataset(synth, 10, dir.file("val.jsonl"));

  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.n = 6;
  cfg.batch_size = 4;
  const TrainResult result = run_training(dir.file("train.jsonl"), dir.file("val.jsonl"),
                                          cfg, dir.file("ckpt.json"), dir.file("log.jsonl"));
  CHECK(result.epochs.size() == 1);
  const std::string log = slurp(dir.file("log.jsonl"));
  CHECK(std::count(log.begin(), log.end(), '\n') == 1);
  CHECK(log.find("\"epoch\":1") != std::string::npos);
  CHECK(log.find("train_loss") != std::string::npos);
}

TEST_CASE("training is deterministic byte for byte") {
  TempDir dir;
  SynthConfig synth;
  synth.n = 6;
  synth.max_objects = 4;
  synth.attention_noise = 0.3;
  synth.jitter = 0.01;
  synth.dup_prob = 0.5;
  synth.seed = 21;
  generate_dataset(synth, 24, dir.file("train.jsonl"));
  synth.seed = 22;
  generate_dataset(synth, 12, dir.file("val.jsonl"));

  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.n = 6;
  cfg.batch_size = 8;
  cfg.seed = 5;
  run_training(dir.file("train.jsonl"), dir.file("val.jsonl"), cfg, dir.file("ckpt_a.json"),
               dir.file("log_a.jsonl"));
  run_training(dir.file("train.jsonl"), dir.file("val.jsonl"), cfg, dir.file("ckpt_b.json"),
               dir.file("log_b.jsonl"));
  CHECK(slurp(dir.file("ckpt_a.json")) == slurp(dir.file("ckpt_b.json")));
  CHECK(slurp(dir.file("log_a.jsonl")) == slurp(dir.file("log_b.jsonl")));
}

TEST_CASE("noise-free data is classified perfectly before and after training") {
  TempDir dir;
  SynthConfig synth;
  synth.n = 8;
  synth.max_objects = 6;
  synth.dup_prob = 0.6;
  synth.seed = 31;
  generate_dataset(synth, 30, dir.file("train.jsonl"));
  synth.seed = 32;
  generate_dataset(synth, 20, dir.file("val.jsonl"));

  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.n = 8;
  const TrainResult result = run_training(dir.file("train.jsonl"), dir.file("val.jsonl"),
                                          cfg, dir.file("ckpt.json"), dir.file("log.jsonl"));
  CHECK(result.initial.val_accuracy == 1.0);
  CHECK(result.epochs.back().val_accuracy == 1.0);
}

TEST_CASE("a zero-epoch run logs the pre-training evaluation") {
  TempDir dir;
  SynthConfig synth;
  synth.n = 6;
  synth.max_objects = 4;
  synth.seed = 41;
  generate_dataset(synth, 10, dir.file("train.jsonl"));
  generate_dataset(synth, 10, dir.file("val.jsonl"));

  TrainConfig cfg;
  cfg.epochs = 0;
  cfg.n = 6;
  const TrainResult result = run_training(dir.file("train.jsonl"), dir.file("val.jsonl"),
                                          cfg, dir.file("ckpt.json"), dir.file("log.jsonl"));
  CHECK(result.epochs.empty());
  CHECK(result.initial.val_accuracy == 1.0);
  const std::string log = slurp(dir.file("log.jsonl"));
  CHECK(std::count(log.begin(), log.end(), '\n') == 1);
  CHECK(log.find("\"epoch\":0") != std::string::npos);
}

TEST_CASE("checkpoints round-trip byte for byte") {
  TempDir dir;
  TrainConfig cfg;
  cfg.theta = 0.2;
  cfg.segments = 8;
  CountParams params = CountParams::identity(cfg.segments, cfg.theta);
  AdamState adam = AdamState::zeros(params);
  CountGrads grads;
  for (std::size_t k = 0; k < 8; ++k) {
    grads.plf_weights[k].assign(static_cast<std::size_t>(cfg.segments), 0.0);
    grads.plf_weights[k][k % cfg.segments] = 0.25 * (static_cast<double>(k) + 1.0);
  }
  grads.attention = Eigen::VectorXd::Zero(1);
  adam_step(params, grads, adam, cfg);

  save_checkpoint(dir.file("a.json"), Checkpoint{1, params, adam, cfg});
  const Checkpoint loaded = load_checkpoint(dir.file("a.json"));
  CHECK(loaded.params.theta == 0.2);
  CHECK(loaded.adam.iter == 1);
  save_checkpoint(dir.file("b.json"), loaded);
  CHECK(slurp(dir.file("a.json")) == slurp(dir.file("b.json")));
}

TEST_CASE("unsupported checkpoint versions are rejected") {
  TempDir dir;
  TrainConfig cfg;
  const CountParams params = CountParams::identity(4);
  save_checkpoint(dir.file("v1.json"), Checkpoint{1, params, AdamState::zeros(params), cfg});
  auto j = nlohmann::json::parse(slurp(dir.file("v1.json")));
  j["version"] = 2;
  {
    std::ofstream out(dir.file("v2.json"));
    out << j.dump(2) << "\n";
  }
  CHECK_THROWS_WITH(load_checkpoint(dir.file("v2.json")),
                    Catch::Matchers::ContainsSubstring("version"));
}

TEST_CASE("unlabeled scenes parse but cannot be trained on") {
  TempDir dir;
  {
    std::ofstream out(dir.file("data.jsonl"));
    out << R"({"boxes": [[0.1, 0.1, 0.2, 0.2]], "attention": [0.5]})" << "\n";
  }
  const std::vector<Scene> scenes = read_scenes(dir.file("data.jsonl"));
  REQUIRE(scenes.size() == 1);
  CHECK_FALSE(scenes[0].true_count.has_value());

  TrainConfig cfg;
  cfg.n = 1;
  CHECK_THROWS_AS(train_loop(scenes, scenes, cfg), std::invalid_argument);
}

TEST_CASE("dataset write failures carry the path") {
  SynthConfig cfg;
  cfg.n = 4;
  cfg.max_objects = 2;
  CHECK_THROWS_WITH(generate_dataset(cfg, 2, "/nonexistent-dir/out.jsonl"),
                    Catch::Matchers::ContainsSubstring("/nonexistent-dir/out.jsonl"));
}

TEST_CASE("training rejects scenes that do not match the configured size") {
  TempDir dir;
  SynthConfig synth;
  synth.n = 6;
  synth.max_objects = 4;
  generate_dataset(synth, 5, dir.file("train.jsonl"));
  generate_dataset(synth, 5, dir.file("val.jsonl"));
  TrainConfig cfg;
  cfg.n = 10;
  CHECK_THROWS_AS(run_training(dir.file("train.jsonl"), dir.file("val.jsonl"), cfg,
                               dir.file("ckpt.json"), dir.file("log.jsonl")),
                  std::invalid_argument);
}
