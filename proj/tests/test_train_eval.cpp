#include <doctest.h>

#include <chrono>
#include <cstring>

#include "support.hpp"
#include "unfmri/checkpoint.hpp"
#include "unfmri/train_eval.hpp"

using namespace unfmri;
using namespace testing;

namespace {

UnfoldConfig tiny(Variant v, int stages, int size) {
  UnfoldConfig c;
  c.variant = v;
  c.num_stages = stages;
  c.num_splits = 2;
  c.channels = 8;
  c.height = size;
  c.width = size;
  c.window = 4;
  c.heads = 2;
  c.pgsa_groups = 2;
  return c;
}

std::vector<double> magnitudes(Gen& g, std::size_t n) { return random_real(g, n, 0.0, 1.0); }

}  // namespace

TEST_CASE("property: metrics agree with the scalar references") {
  Gen g(1);
  for (int trial = 0; trial < 50; ++trial) {
    const int h = uniform_int(g, 11, 40), w = uniform_int(g, 11, 40);
    const std::vector<double> truth = magnitudes(g, h * w);
    std::vector<double> recon = truth;
    const double noise = uniform(g, 0.001, 0.5);
    for (double& v : recon) v = std::max(0.0, v + uniform(g, -noise, noise));
    CHECK(psnr(recon, truth) == doctest::Approx(reference_psnr(recon, truth)).epsilon(1e-9));
    CHECK(std::abs(ssim(recon, truth, h, w) - reference_ssim(recon, truth, h, w)) <= 1e-6);
  }
}

TEST_CASE("metric edge cases") {
  Gen g(2);
  const std::vector<double> a = magnitudes(g, 32 * 32);
  CHECK(psnr(a, a) == kPsnrCap);
  CHECK(ssim(a, a, 32, 32) == 1.0);
  // unit range, uniform error 0.1
  std::vector<double> truth(256, 0.0);
  truth[0] = 1.0;
  std::vector<double> shifted = truth;
  for (double& v : shifted) v += 0.1;
  CHECK(psnr(shifted, truth) == doctest::Approx(20.0).epsilon(1e-12));
  for (double eps : {0.01, 0.2, 0.5}) {
    for (std::size_t i = 0; i < truth.size(); ++i) shifted[i] = truth[i] + eps;
    CHECK(psnr(shifted, truth) == doctest::Approx(-20.0 * std::log10(eps)).epsilon(1e-12));
  }
  // the data range comes from the second argument, so symmetry needs equal maxima
  std::vector<double> b = magnitudes(g, 32 * 32);
  b[7] = *std::max_element(a.begin(), a.end());
  CHECK(std::abs(ssim(a, b, 32, 32) - ssim(b, a, 32, 32)) <= 1e-12);
  const std::vector<double> zero(32 * 32, 0.0);
  CHECK(ssim(zero, a, 32, 32) < 0.1);
  std::vector<double> near = a;
  for (double& v : near) v += 1e-6 * std::normal_distribution<double>()(g);
  CHECK(ssim(near, a, 32, 32) >= 0.9999);
  CHECK_THROWS(ssim(std::vector<double>(100, 0.0), std::vector<double>(100, 0.0), 10, 10));
}

TEST_CASE("adam follows the bias-corrected moment update") {
  Var p = make_parameter(Tensor({2}, 0.5));
  Adam opt({{"p", p}}, 0.01, 0.9, 0.999, 1e-8);
  double m = 0.0, v = 0.0, x = 0.5;
  for (int t = 1; t <= 5; ++t) {
    opt.zero_grad();
    backward(sum(square(p)));  // gradient 2x
    opt.step();
    const double gr = 2.0 * x;
    m = 0.9 * m + 0.1 * gr;
    v = 0.999 * v + 0.001 * gr * gr;
    x -= 0.01 * (m / (1.0 - std::pow(0.9, t))) / (std::sqrt(v / (1.0 - std::pow(0.999, t))) + 1e-8);
    CHECK(p.value()[0] == doctest::Approx(x).epsilon(1e-14));
  }
  CHECK(opt.steps() == 5);
}

TEST_CASE("momentum gradient equals the stage difference contracted with the upstream gradient") {
  UnfoldConfig c = tiny(Variant::Ahqs, 1, 16);
  c.denoiser = DenoiserKind::Identity;
  UnfoldModel model(c, 0);
  Gen g(3);
  const ForwardOperator op(make_mask(MaskKind::CartesianRandom, 16, 16, 4, 1, 2));
  const KSpaceMeasurement y = op.forward(random_image(g, 16, 16));
  StageState s = lift(op.adjoint(y), 8);
  s.z = constant(random_tensor(g, {8, 16, 16}));
  const StageState out = run_ahqs_stage(s, model.stages()[0], y, op);
  const Tensor r = random_tensor(g, {8, 16, 16});
  backward(out.z_hat, r);
  double expect = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) expect += r[i] * (out.z.value()[i] - s.z.value()[i]);
  CHECK(model.stages()[0].beta->grad()[0] == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("gradient checks on the shipped modules") {
  for (const std::string module : {"pgsa", "msst", "stage"}) {
    const GradCheckReport r = gradient_check(module);
    CHECK(r.entries.size() >= 20);
    CHECK_MESSAGE(r.passed(1e-4), module << " max rel error " << r.max_rel_error);
  }
  GradCheckConfig zero;
  zero.zero_corner = true;
  CHECK(gradient_check("pgsa", zero).all_finite);
  CHECK(gradient_check("stage", zero).all_finite);
}

TEST_CASE("zero epochs return the initial parameters") {
  UnfoldModel model(tiny(Variant::Gahqs, 1, 16), 4);
  const ParameterSnapshot before = snapshot(model);
  TrainConfig tc;
  tc.epochs = 0;
  const std::vector<Sample> data = make_phantom_set(PhantomKind::RandomEllipses, 2, 16, 16, 1);
  const TrainResult r = train(model, data, data, {MaskKind::EquispacedFraction, 4, 0, 1}, tc);
  CHECK(r.trace.empty());
  CHECK(r.best_epoch == 0);
  REQUIRE(r.best.size() == before.size());
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(r.best[i].second.values() == before[i].second.values());
}

TEST_CASE("training is deterministic for a fixed seed") {
  const std::vector<Sample> data = make_phantom_set(PhantomKind::RandomEllipses, 3, 16, 16, 7);
  TrainConfig tc;
  tc.epochs = 2;
  tc.learning_rate = 1e-3;
  tc.seed = 5;
  auto run = [&] {
    UnfoldModel m(tiny(Variant::Gahqs, 1, 16), 5);
    return train(m, data, {data[0]}, {MaskKind::EquispacedFraction, 4, 0, 1}, tc);
  };
  const TrainResult a = run(), b = run();
  CHECK(a.step_losses == b.step_losses);
  CHECK(format_trace(a.trace) == format_trace(b.trace));
  for (std::size_t i = 0; i < a.best.size(); ++i) CHECK(a.best[i].second.values() == b.best[i].second.values());
  CHECK(a.step_losses.size() == 4);
  tc.seed = 6;
  UnfoldModel m(tiny(Variant::Gahqs, 1, 16), 5);
  CHECK(train(m, data, {data[0]}, {MaskKind::EquispacedFraction, 4, 0, 1}, tc).step_losses != a.step_losses);
}

TEST_CASE("overfitting one phantom drives the loss down") {
  const auto start = std::chrono::steady_clock::now();
  const std::vector<Sample> one = make_phantom_set(PhantomKind::RandomEllipses, 1, 32, 32, 11);
  UnfoldModel model(tiny(Variant::Gahqs, 2, 32), 0);
  TrainConfig tc;
  tc.epochs = 200;
  tc.batch_size = 1;
  tc.learning_rate = 2e-3;
  const TrainResult r = train(model, one, one, {MaskKind::Radial, 4, 0, 0}, tc);
  REQUIRE(r.step_losses.size() == 200);
  auto window = [&](std::size_t end) {
    double s = 0.0;
    for (std::size_t i = end - 20; i < end; ++i) s += r.step_losses[i];
    return s / 20.0;
  };
  MESSAGE("initial loss " << r.step_losses.front() << " final " << r.step_losses.back() << " in "
                          << std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() << " s");
  CHECK(window(200) < window(20));
  CHECK(r.step_losses.back() <= 0.1 * r.step_losses.front());
}

TEST_CASE("non-finite loss names the batch") {
  UnfoldModel model(tiny(Variant::Gahqs, 1, 16), 0);
  model.stages()[0].eta_raw.mutable_value()[0] = std::nan("");
  TrainConfig tc;
  tc.epochs = 1;
  const std::vector<Sample> data = make_phantom_set(PhantomKind::RandomEllipses, 2, 16, 16, 1);
  try {
    train(model, data, data, {MaskKind::EquispacedFraction, 4, 0, 1}, tc);
    FAIL("expected an exception");
  } catch (const NonFiniteLossError& e) {
    CHECK(e.epoch() == 1);
    CHECK(e.batch() == 0);
    CHECK(std::string(e.what()).find("batch") != std::string::npos);
  }
}

TEST_CASE("best record ordering") {
  CHECK(better_record({2, 0, 0, 30.0, 0.5}, {1, 0, 0, 29.0, 0.9}));
  CHECK(better_record({2, 0, 0, 30.0, 0.9}, {1, 0, 0, 30.0, 0.5}));
  CHECK(better_record({1, 0, 0, 30.0, 0.9}, {2, 0, 0, 30.0, 0.9}));
}

TEST_CASE("trace text round trips") {
  const std::vector<EpochRecord> t{{1, 10, 0.125, 25.5, 0.75}, {2, 20, 0.0625, 26.25, 0.8125}};
  const std::vector<EpochRecord> back = parse_trace(format_trace(t));
  REQUIRE(back.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back[i].epoch == t[i].epoch);
    CHECK(back[i].steps == t[i].steps);
    CHECK(back[i].train_loss == t[i].train_loss);
    CHECK(back[i].val_psnr == t[i].val_psnr);
    CHECK(back[i].val_ssim == t[i].val_ssim);
  }
  CHECK(fnv1a_hex("") == "cbf29ce484222325");
  CHECK(fnv1a_hex("a") == "af63dc4c8601ec8c");
}

TEST_CASE("checkpoints round trip architecture and values") {
  UnfoldModel model(tiny(Variant::Baseline2, 2, 16), 9);
  model.stages()[1].beta->mutable_value()[0] = 0.375;
  const Checkpoint c = make_checkpoint(model, snapshot(model), {{"epoch", "3"}});
  const auto dir = scratch_dir("ckpt");
  save_checkpoint(dir / "a.ckpt", c);
  const Checkpoint back = load_checkpoint(dir / "a.ckpt");
  CHECK(back.extra.at("epoch") == "3");
  CHECK(config_manifest(back.config) == config_manifest(model.config()));
  const UnfoldModel restored = instantiate(back);
  const ParameterSnapshot a = snapshot(model), b = snapshot(restored);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].first == b[i].first);
    CHECK(a[i].second.values() == b[i].second.values());
  }
  CHECK(encode_checkpoint(c) == encode_checkpoint(make_checkpoint(restored, b, {{"epoch", "3"}})));
  std::vector<std::uint8_t> bytes = encode_checkpoint(c);
  bytes[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bytes), CheckpointError);
  bytes = encode_checkpoint(c);
  bytes.resize(bytes.size() - 3);
  CHECK_THROWS(decode_checkpoint(bytes));
}

TEST_CASE("identity pipeline on a full mask evaluates as near-exact") {
  UnfoldConfig c = tiny(Variant::Hqs, 1, 32);
  c.denoiser = DenoiserKind::Identity;
  const UnfoldModel model(c, 0);
  const std::vector<Sample> data = make_phantom_set(PhantomKind::SheppLogan, 2, 32, 32, 0);
  const ReconstructionReport r = evaluate(model, data, full_mask(32, 32));
  REQUIRE(r.samples.size() == 2);
  CHECK(r.mean_psnr() >= 60.0);
  CHECK(r.mean_ssim() >= 0.999);
  CHECK(r.error_maps.size() == 2);
  CHECK(r.psnr_values().size() == 2);
  CHECK_THROWS_AS(evaluate(model, {}, full_mask(32, 32)), std::invalid_argument);
  const std::string text = format_report(r);
  CHECK(text.find("sample " + data[0].id) != std::string::npos);

  // an undersampled zero-filled input is strictly worse than the truth
  const ReconstructionReport u = evaluate(model, data, make_mask(MaskKind::Radial, 32, 32, 4, 0, 0));
  CHECK(u.mean_zero_filled_psnr() < 60.0);
}
