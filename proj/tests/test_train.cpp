#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "csdenoise/train.hpp"
#include "csdenoise/wav.hpp"

using namespace csd;

namespace {

RunConfig toy_run_config() {
  RunConfig cfg;
  cfg.set("image_size", "64");
  cfg.set("win_length", "124");
  cfg.set("embed_dim", "8");
  cfg.set("window_size", "4");
  cfg.set("heads", "2,2,2,2");
  cfg.set("batch_size", "2");
  cfg.set("epochs", "0");
  cfg.set("max_steps", "4");
  cfg.set("learning_rate", "0.01");
  cfg.set("seed", "11");
  return cfg;
}

StftConfig toy_stft() { return toy_run_config().stft; }

Dataset toy_data(int n = 4) {
  return make_synthetic_dataset(toy_stft(), n, 512, 16000, 3, 0.05, 0.2);
}

}  // namespace

TEST_CASE("adam: zero gradient leaves parameters unchanged while moments decay") {
  Var p = Var::parameter(CTensor::real(RTensor(Shape{3}, {1.0, -2.0, 0.5})), "p");
  Adam adam({p}, 0.1);
  // one real step to give the moments mass
  p.node()->ensure_grad();
  p.node()->grad.re = RTensor(Shape{3}, {0.5, 0.5, 0.5});
  adam.step();
  const RTensor after_first = p.value().re;

  // from a fresh optimizer, zero gradients do not move fresh parameters
  Var q = Var::parameter(CTensor::real(after_first), "q");
  Adam adam2({q}, 0.1);
  q.node()->ensure_grad();  // grad stays zero
  adam2.step();
  for (int64_t i = 0; i < 3; ++i) CHECK(q.value().re[i] == after_first[i]);
}

TEST_CASE("adam: 1-d quadratic converges to the optimum") {
  Var x = Var::parameter(CTensor::real(RTensor(Shape{1}, {5.0})), "x");
  Adam adam({x}, 0.05);
  for (int it = 0; it < 500; ++it) {
    x.zero_grad();
    // f(x) = (x - 1.5)^2
    Var loss = cmul(add_scalar(x, -1.5), add_scalar(x, -1.5));
    backward(loss);
    adam.step();
  }
  CHECK(std::abs(x.value().re[0] - 1.5) < 1e-3);
}

TEST_CASE("adam: first update has magnitude lr * sign(g)") {
  Var x = Var::parameter(CTensor::real(RTensor(Shape{2}, {0.0, 0.0})), "x");
  Adam adam({x}, 0.01);
  x.node()->ensure_grad();
  x.node()->grad.re = RTensor(Shape{2}, {0.37, -4.2});
  adam.step();
  CHECK(x.value().re[0] == doctest::Approx(-0.01).epsilon(1e-6));
  CHECK(x.value().re[1] == doctest::Approx(0.01).epsilon(1e-6));
}

TEST_CASE("adam: non-finite gradient aborts naming the parameter") {
  Var x = Var::parameter(CTensor::real(RTensor(Shape{1}, {0.0})), "bad_param");
  Adam adam({x}, 0.01);
  x.node()->ensure_grad();
  x.node()->grad.re[0] = std::nan("");
  try {
    adam.step();
    FAIL("expected abort");
  } catch (const ValueError& e) {
    CHECK(std::string(e.what()).find("bad_param") != std::string::npos);
  }
}

TEST_CASE("global-norm clipping rescales only above the threshold") {
  Var x = Var::parameter(CTensor::real(RTensor(Shape{2}, {0.0, 0.0})), "x");
  x.node()->ensure_grad();
  x.node()->grad.re = RTensor(Shape{2}, {3.0, 4.0});
  CHECK(grad_global_norm({x}) == doctest::Approx(5.0));
}

TEST_CASE("one batched step equals the mean of per-sample gradients") {
  std::mt19937_64 rng(7);
  ComplexUnet model(1, 4, 9);
  FeatureExtractor fe(1);
  const Shape img_shape{1, 1, 16, 16};
  CTensor in0(randn(img_shape, rng), randn(img_shape, rng));
  CTensor in1(randn(img_shape, rng), randn(img_shape, rng));
  CTensor t0(randn(img_shape, rng), randn(img_shape, rng));
  CTensor t1(randn(img_shape, rng), randn(img_shape, rng));

  auto run = [&](const CTensor& in, const CTensor& truth) {
    model.params().zero_grads();
    ForwardContext ctx;
    Var gen = model.forward(Var::constant(in), ctx);
    backward(image_loss(gen, Var::constant(truth), fe, nullptr));
    std::vector<RTensor> grads;
    for (const auto& p : model.params().all())
      grads.push_back(p.has_grad() ? p.grad().re : RTensor::zeros(p.shape()));
    return grads;
  };
  const auto g0 = run(in0, t0);
  const auto g1 = run(in1, t1);

  CTensor batch_in = CTensor::zeros(Shape{2, 1, 16, 16});
  CTensor batch_t = CTensor::zeros(Shape{2, 1, 16, 16});
  std::copy(in0.re.data.begin(), in0.re.data.end(), batch_in.re.data.begin());
  std::copy(in0.im.data.begin(), in0.im.data.end(), batch_in.im.data.begin());
  std::copy(in1.re.data.begin(), in1.re.data.end(), batch_in.re.data.begin() + 256);
  std::copy(in1.im.data.begin(), in1.im.data.end(), batch_in.im.data.begin() + 256);
  std::copy(t0.re.data.begin(), t0.re.data.end(), batch_t.re.data.begin());
  std::copy(t0.im.data.begin(), t0.im.data.end(), batch_t.im.data.begin());
  std::copy(t1.re.data.begin(), t1.re.data.end(), batch_t.re.data.begin() + 256);
  std::copy(t1.im.data.begin(), t1.im.data.end(), batch_t.im.data.begin() + 256);

  model.params().zero_grads();
  ForwardContext ctx;
  Var gen = model.forward(Var::constant(batch_in), ctx);
  backward(image_loss(gen, Var::constant(batch_t), fe, nullptr));

  const auto& params = model.params().all();
  double max_err = 0.0;
  for (size_t i = 0; i < params.size(); ++i) {
    const RTensor& gb = params[i].has_grad() ? params[i].grad().re
                                             : RTensor::zeros(params[i].shape());
    for (int64_t j = 0; j < gb.numel(); ++j) {
      const double mean_single = 0.5 * (g0[i][j] + g1[i][j]);
      max_err = std::max(max_err, std::abs(gb[j] - mean_single));
    }
  }
  CHECK(max_err < 1e-5);
}

TEST_CASE("synthetic dataset: shapes, pairing, spectra present") {
  Dataset ds = toy_data(3);
  CHECK(ds.clips.size() == 3);
  for (const auto& pc : ds.clips) {
    CHECK(pc.noisy.length() == 512);
    CHECK(pc.clean.length() == 512);
    CHECK(pc.noisy_img.image.shape() == Shape{1, 64, 64});
    CHECK(pc.noisy_img.hop_length == 8);
    double clean_energy = 0;
    for (double v : pc.clean.samples) clean_energy += v * v;
    CHECK(clean_energy > 0.0);
  }
}

TEST_CASE("paired loader: unmatched and mismatched files are listed exhaustively") {
  namespace fs = std::filesystem;
  const fs::path root = fs::temp_directory_path() / "csd_pairs";
  fs::remove_all(root);
  fs::create_directories(root / "noisy");
  fs::create_directories(root / "clean");
  AudioClip a{std::vector<double>(600, 0.1), 8000};
  AudioClip b{std::vector<double>(700, 0.1), 8000};
  write_wav(a, (root / "noisy" / "x.wav").string());
  write_wav(a, (root / "clean" / "x.wav").string());
  write_wav(a, (root / "noisy" / "only_noisy.wav").string());
  write_wav(a, (root / "clean" / "only_clean.wav").string());
  StftConfig cfg = toy_stft();
  try {
    load_paired_wavs((root / "noisy").string(), (root / "clean").string(), cfg);
    FAIL("expected unmatched listing");
  } catch (const ValueError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("only_noisy.wav") != std::string::npos);
    CHECK(msg.find("only_clean.wav") != std::string::npos);
  }
  fs::remove(root / "noisy" / "only_noisy.wav");
  fs::remove(root / "clean" / "only_clean.wav");
  write_wav(b, (root / "clean" / "x.wav").string());  // length mismatch now
  try {
    load_paired_wavs((root / "noisy").string(), (root / "clean").string(), cfg);
    FAIL("expected mismatch listing");
  } catch (const ValueError& e) {
    CHECK(std::string(e.what()).find("x.wav") != std::string::npos);
  }
  fs::remove_all(root);
}

TEST_CASE("fixed seed gives identical loss curves") {
  RunConfig cfg = toy_run_config();
  Trainer t1(cfg, toy_data());
  Trainer t2(cfg, toy_data());
  for (int i = 0; i < 4; ++i) {
    const LossReport r1 = t1.step();
    const LossReport r2 = t2.step();
    CHECK(r1.total == r2.total);  // bit-identical
    CHECK(r1.l_sdr == r2.l_sdr);
  }
}

TEST_CASE("disabling the image loss leaves exactly the audio share") {
  RunConfig cfg = toy_run_config();
  cfg.train.enable_image_loss = false;
  Trainer t(cfg, toy_data());
  const LossReport r = t.step();
  CHECK(r.total == (1.0 - cfg.train.alpha) * r.l_r);
  CHECK(r.l_im_total == 0.0);

  RunConfig cfg2 = toy_run_config();
  cfg2.train.enable_audio_loss = false;
  Trainer t2(cfg2, toy_data());
  const LossReport r2 = t2.step();
  CHECK(r2.total == cfg2.train.alpha * r2.l_im_total);

  RunConfig bad = toy_run_config();
  bad.train.enable_image_loss = false;
  bad.train.enable_audio_loss = false;
  CHECK_THROWS_AS(Trainer(bad, toy_data()), ValueError);
}

TEST_CASE("checkpoint: save, load, continue is bit-identical") {
  namespace fs = std::filesystem;
  RunConfig cfg = toy_run_config();
  cfg.train.max_steps = 6;

  Trainer uninterrupted(cfg, toy_data());
  for (int i = 0; i < 2; ++i) uninterrupted.step();
  const std::string path = (fs::temp_directory_path() / "csd_ckpt_test.bin").string();
  save_checkpoint(uninterrupted.make_checkpoint(), path);
  const LossReport r_direct = uninterrupted.step();

  Trainer resumed(cfg, toy_data());
  resumed.restore(load_checkpoint(path));
  CHECK(resumed.current_step() == 2);
  const LossReport r_resumed = resumed.step();
  CHECK(r_resumed.total == r_direct.total);

  // parameters bit-identical after the post-restore step
  const auto& pa = uninterrupted.model().params().all();
  const auto& pb = resumed.model().params().all();
  for (size_t i = 0; i < pa.size(); ++i)
    for (int64_t j = 0; j < pa[i].numel(); ++j)
      CHECK(pa[i].value().re[j] == pb[i].value().re[j]);

  // a conflicting architecture is refused with a diff
  RunConfig other = toy_run_config();
  other.set("embed_dim", "16");
  Trainer wrong(other, toy_data());
  try {
    wrong.restore(load_checkpoint(path));
    FAIL("expected mismatch");
  } catch (const ValueError& e) {
    CHECK(std::string(e.what()).find("embed_dim") != std::string::npos);
  }
  fs::remove(path);
}

TEST_CASE("loss stays finite over a short run and decreases on the toy set") {
  RunConfig cfg = toy_run_config();
  cfg.train.max_steps = 30;
  Trainer t(cfg, toy_data());
  double first = 0, last = 0;
  t.run([&](int64_t step, const LossReport& r) {
    CHECK(std::isfinite(r.total));
    if (step == 1) first = r.total;
    last = r.total;
  });
  CHECK(last < first);
}

TEST_CASE("evaluation rows aggregate per-clip metrics") {
  RunConfig cfg = toy_run_config();
  Dataset data = toy_data(2);
  Trainer t(cfg, data);
  auto rows = evaluate_dataset(t.model(), t.data(), cfg.stft);
  REQUIRE(rows.size() == 2);
  for (const auto& r : rows) {
    CHECK(std::isfinite(r.sdr_noisy));
    CHECK(r.ssim3 <= 1.0);
    CHECK(r.ssim3 >= -1.0);
  }
}
