// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Tolerances are pinned in code next to each check.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "csdenoise/checkpoint.hpp"
#include "csdenoise/losses.hpp"
#include "csdenoise/train.hpp"
#include "csdenoise/wav.hpp"
#include "gradcheck.hpp"

using namespace csd;
using csd::testing::gradcheck;
using csd::testing::random_ctensor;

namespace {

uint64_t g_toy_seed = 42;  // overridable for trajectory sweeps (argv[1])

struct Outcome {
  bool pass = true;
  std::string detail;
};

using Runner = std::function<Outcome()>;

bool expect(Outcome& o, bool cond, const std::string& what) {
  if (!cond) {
    o.pass = false;
    o.detail += (o.detail.empty() ? "" : "; ") + what;
  }
  return cond;
}

RunConfig toy_config() {
  RunConfig cfg;
  cfg.set("image_size", "64");
  cfg.set("win_length", "124");
  cfg.set("embed_dim", "8");
  cfg.set("window_size", "4");
  cfg.set("heads", "2,2,2,2");
  cfg.set("batch_size", "4");
  cfg.set("epochs", "0");
  cfg.set("max_steps", "200");
  cfg.set("learning_rate", "0.01");
  cfg.set("seed", std::to_string(g_toy_seed));
  return cfg;
}

Dataset toy_dataset() {
  // four tone-pair clips with additive white noise; bin-centred tones keep
  // the fixture's spectral rows well conditioned. The clips go through WAV
  // files so the fixture exercises the production data path end to end.
  namespace fs = std::filesystem;
  const fs::path root = fs::temp_directory_path() / "csd_acceptance_toy";
  fs::create_directories(root / "noisy");
  fs::create_directories(root / "clean");
  const Dataset synth = make_synthetic_dataset(toy_config().stft, 4, 4096, 16000, /*seed=*/3,
                                               /*noise_sigma=*/0.025, /*amplitude=*/0.1,
                                               /*tones=*/2);
  for (const auto& pc : synth.clips) {
    write_wav(pc.noisy, (root / "noisy" / pc.name).string());
    write_wav(pc.clean, (root / "clean" / pc.name).string());
  }
  return load_paired_wavs((root / "noisy").string(), (root / "clean").string(),
                          toy_config().stft);
}

// -------------------------------------------------------------------------
// 1. gradient correctness
// -------------------------------------------------------------------------

Outcome criterion_gradients() {
  Outcome o;
  std::mt19937_64 rng(2024);
  double worst = 0.0;
  auto track = [&](const char* name, double err, double tol = 1e-4) {
    worst = std::max(worst, err);
    expect(o, err < tol, std::string(name) + " rel err " + std::to_string(err));
  };

  {  // lifted elementwise layers
    Var x = Var(random_ctensor(Shape{3, 6}, rng), true);
    track("gelu", gradcheck([&] { return mean(cabs(gelu(x))); }, {x}, rng).max_rel_err);
    track("sigmoid", gradcheck([&] { return mean(cabs(sigmoid(x))); }, {x}, rng).max_rel_err);
    track("softmax", gradcheck([&] { return mean(cabs(softmax_last(x))); }, {x}, rng).max_rel_err);
    Var xr = Var(CTensor(rand_uniform(Shape{3, 6}, rng, 0.25, 1.0),
                         rand_uniform(Shape{3, 6}, rng, -1.0, -0.25)),
                 true);
    track("relu", gradcheck([&] { return mean(cabs(relu(xr))); }, {xr}, rng).max_rel_err);
  }
  {  // parametric lifted layers
    Var x = Var(random_ctensor(Shape{4, 5}, rng), true);
    Var w = Var(CTensor::real(randn(Shape{3, 5}, rng, 0.4)), true);
    Var b = Var(CTensor::real(randn(Shape{3}, rng, 0.4)), true);
    track("linear",
          gradcheck([&] { return mean(cabs(linear(x, w, b))); }, {x, w, b}, rng).max_rel_err);
    Var g = Var(CTensor::real(rand_uniform(Shape{5}, rng, 0.6, 1.4)), true);
    Var be = Var(CTensor::real(randn(Shape{5}, rng, 0.3)), true);
    track("layer_norm",
          gradcheck([&] { return mean(cabs(layer_norm(x, g, be))); }, {x, g, be}, rng)
              .max_rel_err);
    Var xi = Var(random_ctensor(Shape{1, 2, 6, 6}, rng), true);
    Var wc = Var(CTensor::real(randn(Shape{3, 2, 3, 3}, rng, 0.4)), true);
    Var bc = Var(CTensor::real(randn(Shape{3}, rng, 0.4)), true);
    track("conv2d",
          gradcheck([&] { return mean(cabs(conv2d(xi, wc, bc, 2, 1))); }, {xi, wc, bc}, rng)
              .max_rel_err);
    track("sepconv", gradcheck([&] { return mean(cabs(sepconv_valid(xi, {0.25, 0.5, 0.25}))); },
                               {xi}, rng)
                         .max_rel_err);
    const Interp1D plan = make_interp(6, 9);
    track("axis_interp",
          gradcheck([&] { return mean(cabs(axis_interp(xi, 3, plan))); }, {xi}, rng).max_rel_err);
  }
  {  // complex structure ops
    Var xa = Var(CTensor(rand_uniform(Shape{8}, rng, 0.4, 1.4),
                         rand_uniform(Shape{8}, rng, 0.4, 1.4)),
                 true);
    track("cabs", gradcheck([&] { return mean(cabs(xa)); }, {xa}, rng).max_rel_err);
    Var a = Var(random_ctensor(Shape{2, 3, 4}, rng), true);
    Var b = Var(random_ctensor(Shape{2, 4, 3}, rng), true);
    track("cmatmul",
          gradcheck([&] { return mean(cabs(cmatmul(a, b))); }, {a, b}, rng).max_rel_err);
    Var bt = Var(random_ctensor(Shape{2, 3, 4}, rng), true);
    track("cmatmul_t",
          gradcheck([&] { return mean(cabs(cmatmul(a, bt, true))); }, {a, bt}, rng).max_rel_err);
  }
  {  // attention block pair (W-MSA then SW-MSA structure)
    const int c = 4, heads = 1, m = 4, res = 4;
    auto mk_param = [&](Shape s, double sigma) {
      return Var(CTensor::real(randn(s, rng, sigma)), true);
    };
    SwinBlockWeights blk;
    blk.ln1_g = Var(CTensor::real(RTensor::full(Shape{c}, 1.0)), true);
    blk.ln1_b = mk_param(Shape{c}, 0.1);
    blk.qkv_w = mk_param(Shape{3 * c, c}, 0.3);
    blk.qkv_b = mk_param(Shape{3 * c}, 0.1);
    blk.rpb_table = mk_param(Shape{(2 * m - 1) * (2 * m - 1), heads}, 0.3);
    blk.proj_w = mk_param(Shape{c, c}, 0.3);
    blk.proj_b = mk_param(Shape{c}, 0.1);
    blk.ln2_g = Var(CTensor::real(RTensor::full(Shape{c}, 1.0)), true);
    blk.ln2_b = mk_param(Shape{c}, 0.1);
    blk.mlp_w1 = mk_param(Shape{2 * c, c}, 0.3);
    blk.mlp_b1 = mk_param(Shape{2 * c}, 0.1);
    blk.mlp_w2 = mk_param(Shape{c, 2 * c}, 0.3);
    blk.mlp_b2 = mk_param(Shape{c}, 0.1);
    Var tokens = Var(random_ctensor(Shape{1, res * res, c}, rng), true);
    auto r = gradcheck(
        [&] {
          ForwardContext ctx;
          Var h = swin_block(tokens, blk, 1, res, c, heads, m, 0.0, false, ctx);
          h = swin_block(h, blk, 1, res, c, heads, m, 0.0, false, ctx);
          return mean(cabs(h));
        },
        {tokens, blk.qkv_w, blk.proj_w, blk.rpb_table, blk.mlp_w1, blk.ln1_b}, rng);
    track("attention_pair", r.max_rel_err);
  }
  {  // loss terms; truth pins the pair extremes so the SSIM range constant
     // stays locally flat under pred perturbation (kink exclusion, as at the
     // cabs origin)
    FeatureExtractor fe(1);
    CTensor truth_t = random_ctensor(Shape{1, 1, 12, 12}, rng);
    truth_t.re[0] = 2.0;
    truth_t.im[0] = 2.0;
    truth_t.re[1] = -2.0;
    truth_t.im[1] = -2.0;
    truth_t.re[2] = 0.0;
    truth_t.im[2] = 0.0;
    Var truth = Var::constant(truth_t);
    Var pred = Var(random_ctensor(Shape{1, 1, 12, 12}, rng, 0.4), true);
    track("l1", gradcheck([&] { return l1_loss(pred, truth); }, {pred}, rng).max_rel_err);
    track("ssim",
          gradcheck([&] { return ssim_loss(creal(pred), creal(truth)); }, {pred}, rng)
              .max_rel_err);
    track("detail",
          gradcheck([&] { return detail_loss(creal(pred), creal(truth), fe); }, {pred}, rng)
              .max_rel_err);
    track("image_loss",
          gradcheck([&] { return image_loss(pred, truth, fe, nullptr); }, {pred}, rng)
              .max_rel_err);
    Var clean = Var::constant(CTensor::real(randn(Shape{48}, rng)));
    Var noisy = Var(CTensor::real(randn(Shape{48}, rng)), true);
    track("sdr_loss", gradcheck([&] { return sdr_loss(noisy, clean); }, {noisy}, rng).max_rel_err);
    track("reconstruction",
          gradcheck([&] { return reconstruction_loss(noisy, clean, nullptr); }, {noisy}, rng)
              .max_rel_err);
    StftConfig scfg;
    scfg.image_size = 8;
    scfg.n_fft = 15;
    scfg.win_length = 14;
    Var spec = Var(random_ctensor(Shape{8, 8}, rng), true);
    track("istft", gradcheck([&] { return mean(cabs(istft_op(spec, scfg, 8, 64))); }, {spec},
                             rng, 20)
                       .max_rel_err);
  }
  {  // tiny model end to end, looser 1e-3 bound
    SwinConfig scfg;
    scfg.image_size = 64;
    scfg.embed_dim = 8;
    scfg.window_size = 4;
    scfg.heads = {2, 2, 2, 2};
    SwinDenoiser model(scfg, 23);
    Var img = Var(random_ctensor(Shape{1, 1, 64, 64}, rng, 0.5), true);
    std::vector<Var> leaves = {img};
    const auto& params = model.params().all();
    std::uniform_int_distribution<size_t> pick(0, params.size() - 1);
    for (int i = 0; i < 5; ++i) leaves.push_back(params[pick(rng)]);
    auto r = gradcheck(
        [&] {
          ForwardContext ctx;
          return mean(cabs(model.forward(img, ctx)));
        },
        leaves, rng, 4);
    track("tiny_end_to_end", r.max_rel_err, 1e-3);
  }
  o.detail = "worst rel err " + std::to_string(worst) + (o.detail.empty() ? "" : "; " + o.detail);
  return o;
}

// -------------------------------------------------------------------------
// 2. STFT/ISTFT round trip
// -------------------------------------------------------------------------

Outcome criterion_roundtrip() {
  Outcome o;
  std::mt19937_64 rng(7);
  const StftConfig cfg;  // 512 / 1023 / 1000
  double worst_raw = 0, worst_resized = 0;
  const int64_t lengths[4] = {4096, 5120, 16000, 48000};
  for (int64_t len : lengths) {
    for (int trial = 0; trial < 5; ++trial) {
      AudioClip clip;
      clip.sample_rate = 16000;
      clip.samples.resize(static_cast<size_t>(len));
      std::normal_distribution<double> d(0.0, 0.3);
      double peak = 0;
      for (auto& v : clip.samples) {
        v = d(rng);
        peak = std::max(peak, std::abs(v));
      }
      for (auto& v : clip.samples) v /= peak * 1.01;

      auto rel = [&](const std::vector<double>& got) {
        double num = 0, den = 0;
        for (int64_t i = 1023; i < len - 1023; ++i) {
          num += (got[i] - clip.samples[i]) * (got[i] - clip.samples[i]);
          den += clip.samples[i] * clip.samples[i];
        }
        return std::sqrt(num / den);
      };
      int hop = 0, frames = 0;
      CTensor spec = stft_matrix(clip.samples, cfg, &hop, &frames);
      worst_raw = std::max(worst_raw, rel(istft_vector(spec, cfg, hop, len)));
      worst_resized = std::max(worst_resized, rel(istft_audio(stft_image(clip, cfg)).samples));
    }
  }
  expect(o, worst_raw < 1e-3, "resize-free " + std::to_string(worst_raw));
  expect(o, worst_resized < 5e-2, "resized " + std::to_string(worst_resized));
  std::ostringstream d;
  d << "20 clips, resize-free err " << worst_raw << ", resized err " << worst_resized;
  o.detail = d.str();
  return o;
}

// -------------------------------------------------------------------------
// 3. shape contract at 512 / C = 96
// -------------------------------------------------------------------------

Outcome criterion_shapes() {
  Outcome o;
  SwinConfig cfg;  // defaults: 512, C = 96, depths 2,2,2,2, heads 3,6,12,24
  SwinDenoiser model(cfg, 1);
  const auto trace = model.stage_trace();
  const std::pair<int, int> expect_dims[8] = {{128, 96},  {64, 192}, {32, 384}, {16, 768},
                                              {16, 768},  {32, 384}, {64, 192}, {128, 96}};
  for (int i = 0; i < 8; ++i) {
    expect(o,
           trace[i].first == expect_dims[i].first && trace[i].second == expect_dims[i].second,
           "stage " + std::to_string(i));
  }
  std::mt19937_64 rng(3);
  NoGradGuard ng;
  Var img = Var::constant(random_ctensor(Shape{1, 1, 512, 512}, rng, 0.5));
  Var out = model.forward_inference(img);
  expect(o, out.shape() == Shape{1, 1, 512, 512}, "output shape " + shape_str(out.shape()));
  expect(o, out.value().all_finite(), "non-finite output");
  o.detail = "8 stages at (H/4,C)..(H/32,8C) and mirror; output 1x1x512x512";
  return o;
}

// -------------------------------------------------------------------------
// 4. metric axioms
// -------------------------------------------------------------------------

Outcome criterion_metrics() {
  Outcome o;
  std::mt19937_64 rng(11);
  RTensor x = randn(Shape{16, 16}, rng);
  RTensor y = randn(Shape{16, 16}, rng);
  auto rimg = [](const RTensor& t) { return Var::constant(CTensor::real(t)); };
  const double self = ssim(rimg(x), rimg(x)).item();
  expect(o, std::abs(self - 1.0) <= 1e-6, "ssim(x,x) = " + std::to_string(self));
  const double xy = ssim(rimg(x), rimg(y)).item();
  const double yx = ssim(rimg(y), rimg(x)).item();
  expect(o, std::abs(xy - yx) <= 1e-6, "ssim symmetry");

  std::vector<double> ref(256);
  std::normal_distribution<double> d(0.0, 1.0);
  for (auto& v : ref) v = d(rng);
  std::vector<double> half(ref);
  for (auto& v : half) v *= 0.5;
  const double sdr_half = sdr_metric(half, ref);
  expect(o, std::abs(sdr_half - 6.0206) <= 1e-3, "SDR(0.5y,y) = " + std::to_string(sdr_half));

  // an error vector scaled to exactly 20 dB gives zero loss
  std::vector<double> e(ref.size());
  double ee = 0, rr = 0;
  for (size_t i = 0; i < e.size(); ++i) {
    e[i] = d(rng);
    ee += e[i] * e[i];
    rr += ref[i] * ref[i];
  }
  std::vector<double> at20(ref);
  const double s20 = std::sqrt(std::pow(10.0, -2.0) * rr / ee);
  for (size_t i = 0; i < e.size(); ++i) at20[i] += s20 * e[i];
  const double l20 =
      sdr_loss(Var::constant(CTensor::real(RTensor(Shape{256}, at20))),
               Var::constant(CTensor::real(RTensor(Shape{256}, ref))))
          .item();
  expect(o, std::abs(l20) <= 1e-9, "L_SDR at 20 dB = " + std::to_string(l20));

  // report identities on every logged step of a short run
  RunConfig cfg = toy_config();
  cfg.train.max_steps = 6;
  Trainer trainer(cfg, toy_dataset());
  trainer.run([&](int64_t, const LossReport& r) {
    const double kinds = r.real.total() + r.imag.total() + r.abs.total();
    expect(o, std::abs(kinds - r.l_im_total) <= 1e-6, "l_im_total identity");
    expect(o, std::abs(r.total - (0.5 * r.l_im_total + 0.5 * r.l_r)) <= 1e-6,
           "objective identity");
  });
  o.detail = "ssim/sdr closed forms and per-step report identities";
  return o;
}

// -------------------------------------------------------------------------
// 5. toy overfit, Alg.-1 end to end
// -------------------------------------------------------------------------

Outcome criterion_overfit() {
  Outcome o;
  RunConfig cfg = toy_config();
  Dataset data = toy_dataset();
  double baseline = 0;
  for (const auto& pc : data.clips) baseline += sdr_metric(pc.noisy.samples, pc.clean.samples);
  baseline /= static_cast<double>(data.clips.size());

  Trainer trainer(cfg, std::move(data));
  double first = 0, last = 0;
  trainer.run([&](int64_t step, const LossReport& r) {
    if (step == 1) first = r.total;
    last = r.total;
  });
  const auto rows = evaluate_dataset(trainer.model(), trainer.data(), cfg.stft);
  double sdr_out = 0;
  for (const auto& r : rows) sdr_out += r.sdr_denoised;
  sdr_out /= static_cast<double>(rows.size());

  expect(o, last < 0.10 * first,
         "loss " + std::to_string(last) + " !< 10% of " + std::to_string(first));
  expect(o, sdr_out >= baseline + 3.0,
         "SDR " + std::to_string(sdr_out) + " vs baseline " + std::to_string(baseline));
  std::ostringstream d;
  d << "loss " << first << " -> " << last << " (" << (100.0 * last / first) << "%), SDR "
    << baseline << " -> " << sdr_out << " dB over 200 steps";
  o.detail = d.str();
  return o;
}

// -------------------------------------------------------------------------
// 6. ablation structure
// -------------------------------------------------------------------------

Outcome criterion_ablation() {
  Outcome o;
  RunConfig cfg = toy_config();
  const AblationResult result = run_ablation(cfg, toy_dataset(), /*steps_per_cell=*/120);
  const char* labels[6] = {"U+I", "U+A", "U+I+A", "C+I", "C+A", "C+I+A"};
  expect(o, result.cells.size() == 6, "six cells");
  for (int i = 0; i < 6; ++i) {
    expect(o, result.cells[i].label == labels[i], "column order");
    expect(o, std::isfinite(result.cells[i].sdr), std::string(labels[i]) + " non-finite");
    expect(o, result.cells[i].sdr > result.noisy_baseline_sdr,
           std::string(labels[i]) + " SDR " + std::to_string(result.cells[i].sdr) +
               " !> baseline " + std::to_string(result.noisy_baseline_sdr));
  }
  const std::string table = render_ablation_table(result);
  expect(o, table.find("U+I & U+A & U+I+A & C+I & C+A & C+I+A") != std::string::npos,
         "table layout");
  std::printf("%s", table.c_str());
  auto cell = [&](const char* l) {
    for (const auto& c : result.cells)
      if (c.label == l) return c.sdr;
    return 0.0;
  };
  // orderings are logged, not asserted
  std::printf("[info] C+I+A %.2f vs C+I %.2f, C+A %.2f; U+I+A %.2f vs U+I %.2f, U+A %.2f\n",
              cell("C+I+A"), cell("C+I"), cell("C+A"), cell("U+I+A"), cell("U+I"), cell("U+A"));
  std::ostringstream d;
  d << "baseline " << result.noisy_baseline_sdr << " dB; cells";
  for (const auto& c : result.cells) d << " " << c.label << "=" << c.sdr;
  o.detail = d.str();
  return o;
}

// -------------------------------------------------------------------------
// 7. real-subspace consistency
// -------------------------------------------------------------------------

Outcome criterion_real_subspace() {
  Outcome o;
  std::mt19937_64 rng(13);
  Var x = Var::constant(CTensor::real(randn(Shape{2, 4, 6}, rng)));
  expect(o, relu(x).value().imag_is_zero(), "relu");
  expect(o, gelu(x).value().imag_is_zero(), "gelu");
  expect(o, cabs(x).value().imag_is_zero(), "cabs");
  Var w = Var::constant(CTensor::real(randn(Shape{5, 6}, rng)));
  Var b = Var::constant(CTensor::real(randn(Shape{5}, rng)));
  expect(o, linear(x, w, b).value().imag_is_zero(), "linear");
  Var g = Var::constant(CTensor::real(rand_uniform(Shape{6}, rng, 0.5, 1.5)));
  Var be = Var::constant(CTensor::real(randn(Shape{6}, rng)));
  expect(o, layer_norm(x, g, be).value().imag_is_zero(), "layer_norm");
  Var xi = Var::constant(CTensor::real(randn(Shape{1, 2, 8, 8}, rng)));
  Var wc = Var::constant(CTensor::real(randn(Shape{3, 2, 3, 3}, rng)));
  Var bc = Var::constant(CTensor::real(randn(Shape{3}, rng)));
  expect(o, conv2d(xi, wc, bc, 1, 1).value().imag_is_zero(), "conv2d");
  expect(o, sepconv_valid(xi, {0.25, 0.5, 0.25}).value().imag_is_zero(), "sepconv");
  expect(o, reshape(x, Shape{48}).value().imag_is_zero(), "reshape");
  Var wr = Var::constant(CTensor::real(randn(Shape{2, 6, 3}, rng)));
  expect(o, cmatmul(x, wr).value().imag_is_zero(), "cmatmul vs real");
  const Interp1D plan = make_interp(6, 10);
  expect(o, axis_interp(x, 2, plan).value().imag_is_zero(), "axis_interp");
  // sigmoid and softmax do not fix zero: the lift maps the zero imaginary
  // plane to O(0) exactly, with no leakage from the real part
  Var sg = sigmoid(x);
  bool ok = true;
  for (int64_t i = 0; i < sg.numel(); ++i) ok = ok && sg.value().im[i] == 0.5;
  expect(o, ok, "sigmoid O(0) plane");
  Var sm = softmax_last(x);
  ok = true;
  for (int64_t i = 0; i < sm.numel(); ++i)
    ok = ok && std::abs(sm.value().im[i] - 1.0 / 6.0) < 1e-15;
  expect(o, ok, "softmax O(0) plane");
  // a softmax-free lifted model keeps purely real inputs purely real
  ComplexUnet unet(1, 6, 17);
  NoGradGuard ng;
  Var real_img = Var::constant(CTensor::real(randn(Shape{1, 1, 16, 16}, rng)));
  expect(o, unet.forward_inference(real_img).value().imag_is_zero(), "unet model level");
  o.detail = "zero-fixing lifted ops exact; sigmoid/softmax checked as O(0) planes";
  return o;
}

// -------------------------------------------------------------------------
// 8. determinism and checkpointing
// -------------------------------------------------------------------------

Outcome criterion_determinism() {
  Outcome o;
  RunConfig cfg = toy_config();
  cfg.train.max_steps = 5;

  Trainer a(cfg, toy_dataset());
  Trainer b(cfg, toy_dataset());
  a.run();
  b.run();
  const auto& pa = a.model().params().all();
  const auto& pb = b.model().params().all();
  bool identical = true;
  for (size_t i = 0; i < pa.size(); ++i)
    for (int64_t j = 0; j < pa[i].numel(); ++j)
      identical = identical && pa[i].value().re[j] == pb[i].value().re[j];
  expect(o, identical, "fixed-seed training not bit-reproducible");

  // save -> load -> one step must equal the uninterrupted step bit for bit
  Trainer c(cfg, toy_dataset());
  for (int i = 0; i < 2; ++i) c.step();
  const auto path = std::filesystem::temp_directory_path() / "csd_acceptance_ckpt.bin";
  save_checkpoint(c.make_checkpoint(), path.string());
  c.step();

  Trainer d(cfg, toy_dataset());
  d.restore(load_checkpoint(path.string()));
  d.step();
  const auto& pc = c.model().params().all();
  const auto& pd = d.model().params().all();
  identical = true;
  for (size_t i = 0; i < pc.size(); ++i)
    for (int64_t j = 0; j < pc[i].numel(); ++j)
      identical = identical && pc[i].value().re[j] == pd[i].value().re[j];
  expect(o, identical, "resume differs from uninterrupted training");
  std::filesystem::remove(path);
  o.detail = "bit-identical reruns and save/load/continue";
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc > 1) g_toy_seed = std::strtoull(argv[1], nullptr, 10);
  if (argc > 2) {
    // sweep helper: run only the overfit criterion
    Outcome o = criterion_overfit();
    std::printf("[%s] overfit seed %llu: %s\n", o.pass ? "PASS" : "FAIL",
                static_cast<unsigned long long>(g_toy_seed), o.detail.c_str());
    return o.pass ? 0 : 1;
  }
  struct Entry {
    int id;
    const char* name;
    Runner run;
    double budget_s;  // 0 = unbounded
  };
  const Entry entries[] = {
      {1, "gradient correctness", criterion_gradients, 120.0},
      {2, "stft/istft round trip", criterion_roundtrip, 30.0},
      {3, "shape contract 512/C96", criterion_shapes, 0.0},
      {4, "metric axioms", criterion_metrics, 0.0},
      {5, "toy overfit", criterion_overfit, 900.0},
      {6, "ablation structure", criterion_ablation, 5400.0},
      {7, "real-subspace consistency", criterion_real_subspace, 0.0},
      {8, "determinism & checkpointing", criterion_determinism, 0.0},
  };
  int failures = 0;
  for (const auto& e : entries) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = e.run();
    } catch (const std::exception& ex) {
      o.pass = false;
      o.detail = std::string("exception: ") + ex.what();
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (e.budget_s > 0.0 && secs > e.budget_s) {
      o.pass = false;
      o.detail += "; over time budget " + std::to_string(e.budget_s) + "s";
    }
    std::printf("[%s] criterion %d: %s (%s) [%.1fs]\n", o.pass ? "PASS" : "FAIL", e.id, e.name,
                o.detail.c_str(), secs);
    std::fflush(stdout);
    if (!o.pass) ++failures;
  }
  if (failures) std::printf("%d criterion(s) failed\n", failures);
  return failures == 0 ? 0 : 1;
}
