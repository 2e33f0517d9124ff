#include "unfmri/train_eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "unfmri/log.hpp"

namespace unfmri {

// ---- metrics ------------------------------------------------------------------------------

namespace {

void require_same_size(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw std::invalid_argument(std::string(what) + ": size mismatch (" + std::to_string(a) + " vs " +
                                std::to_string(b) + ")");
  }
}

void require_same_shape(const ComplexImage& a, const ComplexImage& b, const char* what) {
  if (a.height() != b.height() || a.width() != b.width()) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch");
  }
}

double data_range(std::span<const double> truth) {
  const double peak = truth.empty() ? 0.0 : *std::max_element(truth.begin(), truth.end());
  return peak > 0.0 ? peak : 1.0;
}

std::vector<double> gaussian_window() {
  constexpr int kSize = 11;
  constexpr double kSigma = 1.5;
  std::vector<double> g(kSize);
  double total = 0.0;
  for (int i = 0; i < kSize; ++i) {
    const double d = i - kSize / 2;
    g[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    total += g[i];
  }
  for (double& v : g) v /= total;
  return g;
}

}  // namespace

double psnr(std::span<const double> recon, std::span<const double> truth) {
  require_same_size(recon.size(), truth.size(), "psnr");
  double mse = 0.0;
  for (std::size_t i = 0; i < recon.size(); ++i) {
    const double d = recon[i] - truth[i];
    mse += d * d;
  }
  mse /= static_cast<double>(recon.size());
  if (mse == 0.0) return kPsnrCap;
  const double l = data_range(truth);
  return std::min(kPsnrCap, 10.0 * std::log10(l * l / mse));
}

double psnr(const ComplexImage& recon, const ComplexImage& truth) {
  require_same_shape(recon, truth, "psnr");
  return psnr(recon.magnitude(), truth.magnitude());
}

double ssim(std::span<const double> recon, std::span<const double> truth, int height, int width) {
  require_same_size(recon.size(), truth.size(), "ssim");
  require_same_size(recon.size(), static_cast<std::size_t>(height) * width, "ssim");
  constexpr int kSize = 11;
  if (height < kSize || width < kSize) throw std::invalid_argument("ssim: image smaller than the 11x11 window");
  const std::vector<double> g = gaussian_window();
  const double l = data_range(truth);
  const double c1 = (0.01 * l) * (0.01 * l);
  const double c2 = (0.03 * l) * (0.03 * l);
  double total = 0.0;
  long count = 0;
  for (int y = 0; y + kSize <= height; ++y) {
    for (int x = 0; x + kSize <= width; ++x) {
      double mx = 0.0, my = 0.0, sxx = 0.0, syy = 0.0, sxy = 0.0;
      for (int i = 0; i < kSize; ++i) {
        for (int j = 0; j < kSize; ++j) {
          const double w = g[i] * g[j];
          const std::size_t p = static_cast<std::size_t>(y + i) * width + x + j;
          const double a = recon[p];
          const double b = truth[p];
          mx += w * a;
          my += w * b;
          sxx += w * a * a;
          syy += w * b * b;
          sxy += w * a * b;
        }
      }
      const double vx = sxx - mx * mx;
      const double vy = syy - my * my;
      const double cxy = sxy - mx * my;
      total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

double ssim(const ComplexImage& recon, const ComplexImage& truth) {
  require_same_shape(recon, truth, "ssim");
  return ssim(recon.magnitude(), truth.magnitude(), truth.height(), truth.width());
}

// ---- training -------------------------------------------------------------------------------

std::string to_string(LossKind k) { return k == LossKind::L1 ? "l1" : "l2"; }

LossKind parse_loss(const std::string& name) {
  if (name == "l1") return LossKind::L1;
  if (name == "l2") return LossKind::L2;
  throw std::invalid_argument("unknown loss '" + name + "'");
}

void TrainConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("train.epochs must be non-negative");
  if (batch_size < 1) throw std::invalid_argument("train.batch_size must be positive");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("train.learning_rate must be positive");
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("train momentum parameters must lie in (0, 1)");
  }
  if (!(adam_epsilon > 0.0)) throw std::invalid_argument("train.adam_epsilon must be positive");
  if (checkpoint_every < 1) throw std::invalid_argument("train.checkpoint_every must be positive");
  if (max_steps < 0) throw std::invalid_argument("train.max_steps must be non-negative");
}

Adam::Adam(ParameterList params, double lr, double beta1, double beta2, double epsilon)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(epsilon) {
  for (const auto& [name, p] : params_) {
    m_.emplace_back(p.shape(), 0.0);
    v_.emplace_back(p.shape(), 0.0);
  }
}

void Adam::zero_grad() {
  for (auto& [name, p] : params_) p.zero_grad();
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Var& p = params_[i].second;
    if (!p.has_grad()) continue;
    Tensor& value = p.mutable_value();
    const Tensor& g = p.grad();
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (std::size_t j = 0; j < value.size(); ++j) {
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
      value[j] -= lr_ * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_);
    }
  }
}

UndersamplingMask MaskSpec::build(int height, int width) const {
  const int acs = acs_lines >= 0 ? acs_lines : default_acs_lines(kind, width);
  return make_mask(kind, height, width, acceleration, seed, acs);
}

ParameterSnapshot snapshot(const UnfoldModel& model) {
  ParameterSnapshot out;
  for (const auto& [name, p] : model.parameters()) out.emplace_back(name, p.value());
  return out;
}

void restore(UnfoldModel& model, const ParameterSnapshot& snap) {
  ParameterList params = model.parameters();
  if (params.size() != snap.size()) throw std::invalid_argument("restore: parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].first != snap[i].first || params[i].second.shape() != snap[i].second.shape()) {
      throw std::invalid_argument("restore: parameter '" + snap[i].first + "' does not match the model");
    }
    params[i].second.mutable_value() = snap[i].second;
  }
}

NonFiniteLossError::NonFiniteLossError(int epoch, int batch)
    : std::runtime_error("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch)),
      epoch_(epoch),
      batch_(batch) {}

Var reconstruction_loss(const Var& recon_pair, const ComplexImage& truth, LossKind kind) {
  const std::vector<double> mag = truth.magnitude();
  const Tensor target({1, truth.height(), truth.width()}, mag);
  const Var diff = sub(pair_magnitude(recon_pair), constant(target));
  return mean(kind == LossKind::L1 ? abs(diff) : square(diff));
}

bool better_record(const EpochRecord& a, const EpochRecord& b) {
  if (a.val_psnr != b.val_psnr) return a.val_psnr > b.val_psnr;
  if (a.val_ssim != b.val_ssim) return a.val_ssim > b.val_ssim;
  return a.epoch < b.epoch;
}

namespace {

struct Prepared {
  const Sample* sample;
  KSpaceMeasurement y;
};

std::vector<Prepared> measure(const std::vector<Sample>& set, const ForwardOperator& op) {
  std::vector<Prepared> out;
  for (const Sample& s : set) {
    if (s.image.height() != op.height() || s.image.width() != op.width()) {
      throw std::invalid_argument("sample " + s.id + " does not match the mask size");
    }
    out.push_back({&s, op.forward(s.image)});
  }
  return out;
}

std::pair<double, double> validation_metrics(const UnfoldModel& model, const std::vector<Prepared>& set,
                                             const ForwardOperator& op) {
  double p = 0.0;
  double s = 0.0;
  for (const Prepared& item : set) {
    const ComplexImage recon = reconstruct(item.y, op, model);
    p += psnr(recon, item.sample->image);
    s += ssim(recon, item.sample->image);
  }
  return {p / static_cast<double>(set.size()), s / static_cast<double>(set.size())};
}

}  // namespace

TrainResult train(UnfoldModel& model, const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                  const MaskSpec& mask_spec, const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  if (train_set.empty()) throw std::invalid_argument("train: training split is empty");
  const ForwardOperator op(mask_spec.build(model.config().height, model.config().width));
  const std::vector<Prepared> train_items = measure(train_set, op);
  if (val_set.empty()) log::warning("train: validation split is empty; scoring the training split instead");
  const std::vector<Prepared> val_items = val_set.empty() ? train_items : measure(val_set, op);

  TrainResult result;
  result.best = snapshot(model);
  Adam adam(model.parameters(), config.learning_rate, config.beta1, config.beta2, config.adam_epsilon);
  const std::size_t n = train_items.size();
  std::vector<std::size_t> order(n);
  std::optional<EpochRecord> best;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    if (config.max_steps > 0 && adam.steps() >= config.max_steps) break;
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng = derive_rng(config.seed, 0x5eed0000ull + static_cast<std::uint64_t>(epoch));
    for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng() % (i + 1)]);

    double epoch_loss = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      if (config.max_steps > 0 && adam.steps() >= config.max_steps) break;
      const std::size_t end = std::min(n, start + static_cast<std::size_t>(config.batch_size));
      const double weight = 1.0 / static_cast<double>(end - start);
      adam.zero_grad();
      double batch_loss = 0.0;
      for (std::size_t i = start; i < end; ++i) {
        const Prepared& item = train_items[order[i]];
        Var loss;
        try {
          loss = scale(reconstruction_loss(run_model(item.y, op, model), item.sample->image, config.loss), weight);
        } catch (const std::runtime_error& e) {
          log::error(e.what());
          throw NonFiniteLossError(epoch, batches);
        }
        const double value = loss.value()[0];
        if (!std::isfinite(value)) throw NonFiniteLossError(epoch, batches);
        batch_loss += value;
        backward(loss);
      }
      adam.step();
      result.step_losses.push_back(batch_loss);
      epoch_loss += batch_loss;
      ++batches;
    }
    if (batches == 0) break;

    EpochRecord rec;
    rec.epoch = epoch;
    rec.steps = adam.steps();
    rec.train_loss = epoch_loss / batches;
    std::tie(rec.val_psnr, rec.val_ssim) = validation_metrics(model, val_items, op);
    result.trace.push_back(rec);
    if (!best || better_record(rec, *best)) {
      best = rec;
      result.best = snapshot(model);
      result.best_epoch = epoch;
    }
    log::info("epoch " + std::to_string(epoch) + " steps " + std::to_string(rec.steps) + " loss " +
              std::to_string(rec.train_loss) + " val psnr " + std::to_string(rec.val_psnr) + " ssim " +
              std::to_string(rec.val_ssim));
    if (on_epoch) on_epoch(rec, model);
  }
  return result;
}

// ---- evaluation -----------------------------------------------------------------------------

namespace {

double mean_of(const std::vector<SampleMetrics>& s, double SampleMetrics::*field) {
  if (s.empty()) return 0.0;
  double t = 0.0;
  for (const SampleMetrics& m : s) t += m.*field;
  return t / static_cast<double>(s.size());
}

}  // namespace

double ReconstructionReport::mean_psnr() const { return mean_of(samples, &SampleMetrics::psnr); }
double ReconstructionReport::mean_ssim() const { return mean_of(samples, &SampleMetrics::ssim); }
double ReconstructionReport::mean_zero_filled_psnr() const { return mean_of(samples, &SampleMetrics::zero_filled_psnr); }
double ReconstructionReport::mean_zero_filled_ssim() const { return mean_of(samples, &SampleMetrics::zero_filled_ssim); }

std::vector<double> ReconstructionReport::psnr_values() const {
  std::vector<double> v;
  for (const SampleMetrics& m : samples) v.push_back(m.psnr);
  return v;
}

std::vector<double> ReconstructionReport::ssim_values() const {
  std::vector<double> v;
  for (const SampleMetrics& m : samples) v.push_back(m.ssim);
  return v;
}

ReconstructionReport evaluate(const UnfoldModel& model, const std::vector<Sample>& samples,
                              const UndersamplingMask& mask) {
  if (samples.empty()) throw std::invalid_argument("evaluate: split is empty");
  const ForwardOperator op(mask);
  ReconstructionReport report;
  report.parameter_count = model.parameter_count();
  report.height = mask.height;
  report.width = mask.width;
  for (const Prepared& item : measure(samples, op)) {
    const ComplexImage& truth = item.sample->image;
    const ComplexImage recon = reconstruct(item.y, op, model);
    const ComplexImage zf = op.adjoint(item.y);
    report.samples.push_back({item.sample->id, psnr(recon, truth), ssim(recon, truth), psnr(zf, truth), ssim(zf, truth)});
    const std::vector<double> a = recon.magnitude();
    const std::vector<double> b = truth.magnitude();
    std::vector<double> err(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) err[i] = std::abs(a[i] - b[i]);
    report.error_maps.push_back(std::move(err));
  }
  return report;
}

std::string format_report(const ReconstructionReport& report) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "# parameters " << report.parameter_count << '\n';
  if (!report.config_hash.empty()) os << "# config_hash " << report.config_hash << '\n';
  os << "# mean_psnr " << report.mean_psnr() << " mean_ssim " << report.mean_ssim() << " zero_filled_psnr "
     << report.mean_zero_filled_psnr() << " zero_filled_ssim " << report.mean_zero_filled_ssim() << '\n';
  os << "# id psnr ssim zero_filled_psnr zero_filled_ssim\n";
  for (const SampleMetrics& m : report.samples) {
    os << "sample " << m.id << ' ' << m.psnr << ' ' << m.ssim << ' ' << m.zero_filled_psnr << ' '
       << m.zero_filled_ssim << '\n';
  }
  return os.str();
}

std::string format_trace(const std::vector<EpochRecord>& trace) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "# epoch psnr ssim train_loss steps\n";
  for (const EpochRecord& r : trace) {
    os << r.epoch << ' ' << r.val_psnr << ' ' << r.val_ssim << ' ' << r.train_loss << ' ' << r.steps << '\n';
  }
  return os.str();
}

std::vector<EpochRecord> parse_trace(const std::string& text) {
  std::vector<EpochRecord> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    EpochRecord r;
    if (!(ls >> r.epoch >> r.val_psnr)) throw std::invalid_argument("trace line is not numeric: " + line);
    ls >> r.val_ssim >> r.train_loss >> r.steps;
    out.push_back(r);
  }
  return out;
}

std::string fnv1a_hex(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

// ---- gradient checks -------------------------------------------------------------------------

GradCheckReport check_gradients(const std::string& name, const ParameterList& params,
                                const std::function<Var()>& output, const Tensor& projection,
                                const GradCheckConfig& config) {
  GradCheckReport report;
  report.module = name;
  // Projecting the deviation from the unperturbed output keeps the summed values small, so
  // rounding in the finite differences stays well below the tolerance.
  Tensor base;
  {
    NoGradGuard guard;
    base = output().value();
  }
  if (!base.same_shape(projection)) throw std::invalid_argument("check_gradients: projection shape mismatch");
  const auto loss = [&] { return dot_constant(sub(output(), constant(base)), projection); };

  for (const auto& [pname, p] : params) {
    Var v = p;
    v.zero_grad();
  }
  backward(loss());
  for (const auto& [pname, p] : params) {
    if (p.has_grad() && !p.grad().all_finite()) report.all_finite = false;
  }
  if (params.empty()) return report;

  Rng rng = derive_rng(config.seed, 0x9c);
  for (int s = 0; s < config.samples; ++s) {
    const auto& [pname, p] = params[rng() % params.size()];
    Var v = p;
    const std::size_t idx = rng() % v.value().size();
    const double analytic = v.has_grad() ? v.grad()[idx] : 0.0;
    const double original = v.value()[idx];
    double plus;
    double minus;
    {
      NoGradGuard guard;
      v.mutable_value()[idx] = original + config.step;
      plus = loss().value()[0];
      v.mutable_value()[idx] = original - config.step;
      minus = loss().value()[0];
      v.mutable_value()[idx] = original;
    }
    const double numeric = (plus - minus) / (2.0 * config.step);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), config.abs_floor});
    GradCheckEntry e{pname, idx, analytic, numeric, std::abs(analytic - numeric) / denom};
    if (!std::isfinite(e.analytic) || !std::isfinite(e.numeric)) report.all_finite = false;
    report.max_rel_error = std::max(report.max_rel_error, std::isfinite(e.rel_error) ? e.rel_error : 1e300);
    report.entries.push_back(e);
  }
  return report;
}

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> n(0.0, 1.0);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = n(rng);
  return t;
}

UnfoldConfig check_model_config(const GradCheckConfig& c, int stages) {
  UnfoldConfig u;
  u.num_stages = stages;
  u.num_splits = c.num_splits;
  u.channels = c.channels;
  u.height = std::max(16, c.height);
  u.width = std::max(16, c.width);
  u.window = c.window;
  u.heads = c.heads;
  u.pgsa_groups = 2;
  u.reduction = 2;
  return u;
}

}  // namespace

GradCheckReport gradient_check(const std::string& module, const GradCheckConfig& config) {
  Rng rng = derive_rng(config.seed, 0x6c);
  const auto input_scale = config.zero_corner ? 0.0 : 1.0;

  if (module == "pgsa") {
    Rng init = derive_rng(config.seed, 1);
    const Pgsa pgsa({config.channels, config.num_splits, 2, 2}, init);
    ParameterList params;
    pgsa.collect(params, "pgsa");
    if (config.zero_corner) zero_values(params);
    Tensor xt = random_tensor({config.channels, config.height, config.width}, rng);
    for (std::size_t i = 0; i < xt.size(); ++i) xt[i] *= input_scale;
    const Var x = constant(xt);
    const Tensor r = random_tensor({config.channels, config.height, config.width}, rng);
    return check_gradients(module, params, [&] { return pgsa(x); }, r, config);
  }

  if (module == "msst") {
    MsstConfig mc;
    mc.channels = config.channels;
    mc.num_splits = config.num_splits;
    mc.window = config.window;
    mc.heads = config.heads;
    mc.height = config.height;
    mc.width = config.width;
    mc.reduction = 2;
    Rng init = derive_rng(config.seed, 2);
    const Msst msst(mc, init);
    ParameterList params;
    msst.collect(params, "msst");
    if (config.zero_corner) zero_values(params);
    Tensor xt = random_tensor({config.channels, config.height, config.width}, rng);
    for (std::size_t i = 0; i < xt.size(); ++i) xt[i] *= input_scale;
    const Var x = constant(xt);
    const Tensor r = random_tensor({config.channels, config.height, config.width}, rng);
    return check_gradients(module, params, [&] { return msst(x); }, r, config);
  }

  if (module == "stage" || module == "full_model") {
    const UnfoldConfig uc = check_model_config(config, module == "stage" ? 1 : 2);
    const UnfoldModel model(uc, config.seed + 3);
    ParameterList params = model.parameters();
    if (config.zero_corner) zero_values(params);
    const ForwardOperator op(make_mask(MaskKind::CartesianRandom, uc.height, uc.width, 4, config.seed,
                                       default_acs_lines(MaskKind::CartesianRandom, uc.width)));
    ComplexImage truth(uc.height, uc.width);
    std::normal_distribution<double> n(0.0, 1.0);
    for (std::size_t i = 0; i < truth.size(); ++i) truth[i] = Complex(n(rng), n(rng)) * input_scale;
    const KSpaceMeasurement y = op.forward(truth);
    if (module == "stage") {
      StageState state = lift(op.adjoint(y), uc.channels);
      const std::vector<int> shape = state.z.shape();
      Tensor zt = random_tensor(shape, rng);
      Tensor ht = random_tensor(shape, rng);
      for (std::size_t i = 0; i < zt.size(); ++i) {
        zt[i] *= input_scale;
        ht[i] *= input_scale;
      }
      state.z = constant(zt);
      state.z_hat = constant(ht);
      const Tensor r = random_tensor({2 * shape[0], shape[1], shape[2]}, rng);
      return check_gradients(
          module, params,
          [&] {
            const StageState next = run_gahqs_stage(state, model.stages()[0], y, op);
            const Var parts[] = {next.z_hat, next.x};
            return concat_channels(parts);
          },
          r, config);
    }
    const Tensor r = random_tensor({2, uc.height, uc.width}, rng);
    return check_gradients(module, params, [&] { return run_model(y, op, model); }, r, config);
  }

  throw std::invalid_argument("gradient_check: unknown module '" + module + "'");
}

}  // namespace unfmri
