#include "unfmri/unfold.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

namespace unfmri {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::Hqs: return "hqs";
    case Variant::Ahqs: return "ahqs";
    case Variant::Gahqs: return "gahqs";
    case Variant::Baseline1: return "baseline1";
    case Variant::Baseline2: return "baseline2";
    case Variant::Baseline3: return "baseline3";
  }
  return "unknown";
}

Variant parse_variant(const std::string& name) {
  for (Variant v : {Variant::Hqs, Variant::Ahqs, Variant::Gahqs, Variant::Baseline1, Variant::Baseline2,
                    Variant::Baseline3}) {
    if (to_string(v) == name) return v;
  }
  throw std::invalid_argument("unknown variant '" + name + "'");
}

std::string to_string(DenoiserKind k) {
  switch (k) {
    case DenoiserKind::Msst: return "msst";
    case DenoiserKind::ConvUnet: return "unet";
    case DenoiserKind::Identity: return "identity";
  }
  return "unknown";
}

DenoiserKind parse_denoiser(const std::string& name) {
  if (name == "msst") return DenoiserKind::Msst;
  if (name == "unet") return DenoiserKind::ConvUnet;
  if (name == "identity") return DenoiserKind::Identity;
  throw std::invalid_argument("unknown denoiser '" + name + "'");
}

DenoiserKind UnfoldConfig::resolved_denoiser() const {
  if (denoiser) return *denoiser;
  return variant == Variant::Baseline3 ? DenoiserKind::ConvUnet : DenoiserKind::Msst;
}

bool UnfoldConfig::has_acceleration() const { return variant != Variant::Hqs && variant != Variant::Baseline1; }

bool UnfoldConfig::has_fusion() const { return variant != Variant::Hqs && variant != Variant::Ahqs; }

void UnfoldConfig::validate() const {
  std::ostringstream err;
  if (num_stages < 0) err << "num_stages must be non-negative; ";
  if (num_splits < 1) err << "num_splits must be positive; ";
  if (channels < 2 || channels % 2 != 0) err << "channels must be a positive even number; ";
  if (num_splits >= 1 && channels % (2 * num_splits) != 0) err << "channels must be divisible by 2*num_splits; ";
  if (height < 8 || width < 8) err << "image size must be at least 8x8; ";
  if (window < 1 || heads < 1 || pgsa_groups < 1 || reduction < 1) {
    err << "window, heads, pgsa_groups and reduction must be positive; ";
  }
  const std::string msg = err.str();
  if (!msg.empty()) throw std::invalid_argument("UnfoldConfig: " + msg.substr(0, msg.size() - 2));
}

Denoiser::Denoiser(DenoiserKind kind, const UnfoldConfig& config, Rng& rng) {
  switch (kind) {
    case DenoiserKind::Msst: {
      MsstConfig mc;
      mc.channels = config.channels;
      mc.num_splits = config.num_splits;
      mc.window = config.window;
      mc.heads = config.heads;
      mc.height = config.height;
      mc.width = config.width;
      mc.reduction = config.reduction;
      impl_ = Msst(mc, rng);
      break;
    }
    case DenoiserKind::ConvUnet: impl_ = ConvUnet(config.channels, rng); break;
    case DenoiserKind::Identity: impl_ = std::monostate{}; break;
  }
}

DenoiserKind Denoiser::kind() const {
  if (std::holds_alternative<Msst>(impl_)) return DenoiserKind::Msst;
  if (std::holds_alternative<ConvUnet>(impl_)) return DenoiserKind::ConvUnet;
  return DenoiserKind::Identity;
}

Var Denoiser::operator()(const Var& x) const {
  if (const auto* m = std::get_if<Msst>(&impl_)) return m->forward(x);
  if (const auto* u = std::get_if<ConvUnet>(&impl_)) return u->forward(x);
  return x;
}

void Denoiser::collect(ParameterList& out, const std::string& prefix) const {
  if (const auto* m = std::get_if<Msst>(&impl_)) m->collect(out, prefix + ".msst");
  if (const auto* u = std::get_if<ConvUnet>(&impl_)) u->collect(out, prefix + ".unet");
}

Fusion::Fusion(int parts, int channels, FusionKind kind, const UnfoldConfig& config, Rng& rng) : kind_(kind) {
  const int wide = parts * channels;
  if (kind == FusionKind::Pyramid) {
    pgsa_ = Pgsa({wide, config.num_splits, config.pgsa_groups, config.reduction}, rng);
  } else if (kind == FusionKind::SqueezeExcitation) {
    se_ = SqueezeExcitation(wide, config.reduction, rng);
  }
  reduce_ = ConvLayer::create(wide, channels, 1, {}, rng, 0.1);
}

Var Fusion::forward(std::span<const Var> terms) const {
  const Var skip = sum_all(terms);
  const Var wide = concat_channels(terms);
  Var attended = wide;
  if (kind_ == FusionKind::Pyramid) attended = pgsa_(wide);
  if (kind_ == FusionKind::SqueezeExcitation) attended = se_(wide);
  return add(skip, reduce_(attended));
}

void Fusion::make_pass_through() {
  kind_ = FusionKind::PassThrough;
  reduce_.weight.mutable_value().fill(0.0);
  reduce_.bias.mutable_value().fill(0.0);
}

void Fusion::collect(ParameterList& out, const std::string& prefix) const {
  if (kind_ == FusionKind::Pyramid) pgsa_.collect(out, prefix + ".pgsa");
  if (kind_ == FusionKind::SqueezeExcitation) se_.collect(out, prefix + ".se");
  reduce_.collect(out, prefix + ".reduce");
}

void StageParams::collect(ParameterList& out, const std::string& prefix) const {
  out.emplace_back(prefix + ".eta", eta_raw);
  if (beta) out.emplace_back(prefix + ".beta", *beta);
  if (fusion_x) fusion_x->collect(out, prefix + ".fusion_x");
  if (fusion_z) fusion_z->collect(out, prefix + ".fusion_z");
  denoiser.collect(out, prefix + ".denoiser");
}

Tensor lift_tensor(const ComplexImage& image, int channels) {
  if (channels < 2 || channels % 2 != 0) {
    throw std::invalid_argument("lift: channel count must be a positive even number, got " + std::to_string(channels));
  }
  const int h = image.height();
  const int w = image.width();
  Tensor t({channels, h, w});
  for (int pair = 0; pair < channels / 2; ++pair) {
    double* re = t.channel(2 * pair);
    double* im = t.channel(2 * pair + 1);
    for (std::size_t p = 0; p < image.size(); ++p) {
      re[p] = image[p].real();
      im[p] = image[p].imag();
    }
  }
  return t;
}

StageState lift(const ComplexImage& x0, int channels) {
  const Var v = constant(lift_tensor(x0, channels));
  return {v, v, v, 0};
}

ComplexImage pair_tensor_to_image(const Tensor& pair) {
  if (pair.rank() != 3 || pair.channels() != 2) throw std::invalid_argument("expected a (2, H, W) tensor");
  std::vector<Complex> values(pair.plane());
  for (std::size_t p = 0; p < values.size(); ++p) values[p] = Complex(pair.channel(0)[p], pair.channel(1)[p]);
  return ComplexImage(pair.height(), pair.width(), std::move(values));
}

ComplexImage project(const StageState& state) {
  NoGradGuard guard;
  return pair_tensor_to_image(pair_mean(state.z).value());
}

Var normal_pairs(const ForwardOperator& op, const Var& features) {
  const Tensor& v = features.value();
  if (v.rank() != 3 || v.channels() % 2 != 0 || v.height() != op.height() || v.width() != op.width()) {
    throw std::invalid_argument("normal_pairs: feature shape " + shape_string(v.shape()) +
                                " does not match the measurement");
  }
  return self_adjoint_linear(features, [&op](const Tensor& t) {
    Tensor out(t.shape());
    const std::size_t plane = t.plane();
    std::vector<Complex> buffer(plane);
    for (int pair = 0; pair < t.channels() / 2; ++pair) {
      const double* re = t.channel(2 * pair);
      const double* im = t.channel(2 * pair + 1);
      for (std::size_t p = 0; p < plane; ++p) buffer[p] = Complex(re[p], im[p]);
      const std::vector<Complex> r = op.normal(buffer);
      double* ore = out.channel(2 * pair);
      double* oim = out.channel(2 * pair + 1);
      for (std::size_t p = 0; p < plane; ++p) {
        ore[p] = r[p].real();
        oim[p] = r[p].imag();
      }
    }
    return out;
  });
}

namespace {

void check_state(const StageState& state, const KSpaceMeasurement& y, const ForwardOperator& op) {
  const Tensor& z = state.z.value();
  if (z.rank() != 3 || z.height() != y.height || z.width() != y.width || y.height != op.height() ||
      y.width != op.width() || state.z_hat.shape() != state.z.shape()) {
    throw std::invalid_argument("stage: state shape " + shape_string(z.shape()) + " does not match measurement " +
                                std::to_string(y.height) + "x" + std::to_string(y.width));
  }
}

// The three terms of the accelerated x-update: z_hat, eta F^T y, -eta F^T F z_hat.
std::vector<Var> update_terms(const Var& anchor, const Var& eta, const KSpaceMeasurement& y,
                              const ForwardOperator& op) {
  const int channels = anchor.value().channels();
  const Var ft_y = constant(lift_tensor(op.adjoint(y), channels));
  return {anchor, scale_by(ft_y, eta), neg(scale_by(normal_pairs(op, anchor), eta))};
}

Var momentum(const Var& z_next, const Var& z_prev, const Var& beta) {
  return sub(scale_by(z_next, add_scalar(beta, 1.0)), scale_by(z_prev, beta));
}

}  // namespace

StageState run_hqs_stage(const StageState& state, const StageParams& params, const KSpaceMeasurement& y,
                         const ForwardOperator& op) {
  check_state(state, y, op);
  const Var x = sum_all(update_terms(state.z, params.eta(), y, op));
  const Var z = params.denoiser(x);
  return {x, z, z, state.stage_index + 1};
}

StageState run_ahqs_stage(const StageState& state, const StageParams& params, const KSpaceMeasurement& y,
                          const ForwardOperator& op) {
  check_state(state, y, op);
  if (!params.beta) throw std::invalid_argument("run_ahqs_stage: parameter absent in variant: beta");
  const Var x = sum_all(update_terms(state.z_hat, params.eta(), y, op));
  const Var z = params.denoiser(x);
  return {x, z, momentum(z, state.z, *params.beta), state.stage_index + 1};
}

StageState run_gahqs_stage(const StageState& state, const StageParams& params, const KSpaceMeasurement& y,
                           const ForwardOperator& op) {
  check_state(state, y, op);
  if (!params.fusion_x) throw std::invalid_argument("run_gahqs_stage: fusion parameters missing");
  const Var x = params.fusion_x->forward(update_terms(state.z_hat, params.eta(), y, op));
  const Var z = params.denoiser(x);
  if (!params.fusion_z) return {x, z, z, state.stage_index + 1};
  if (!params.beta) throw std::invalid_argument("run_gahqs_stage: parameter absent in variant: beta");
  const Var& beta = *params.beta;
  const Var terms[] = {scale_by(z, add_scalar(beta, 1.0)), neg(scale_by(state.z, beta))};
  return {x, z, params.fusion_z->forward(terms), state.stage_index + 1};
}

StageState run_stage(Variant variant, const StageState& state, const StageParams& params,
                     const KSpaceMeasurement& y, const ForwardOperator& op) {
  switch (variant) {
    case Variant::Hqs: return run_hqs_stage(state, params, y, op);
    case Variant::Ahqs: return run_ahqs_stage(state, params, y, op);
    default: return run_gahqs_stage(state, params, y, op);
  }
}

UnfoldModel::UnfoldModel(UnfoldConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  const DenoiserKind denoiser = config_.resolved_denoiser();
  const FusionKind fusion =
      config_.variant == Variant::Baseline2 ? FusionKind::SqueezeExcitation : FusionKind::Pyramid;
  for (int k = 0; k < config_.num_stages; ++k) {
    const auto stream = static_cast<std::uint64_t>(k) * 8;
    StageParams p;
    p.eta_raw = make_parameter(Tensor::scalar(0.0));
    if (config_.has_acceleration()) p.beta = make_parameter(Tensor::scalar(0.1));
    if (config_.has_fusion()) {
      Rng rx = derive_rng(seed, stream + 0);
      p.fusion_x = Fusion(3, config_.channels, fusion, config_, rx);
      if (config_.has_acceleration()) {
        Rng rz = derive_rng(seed, stream + 1);
        p.fusion_z = Fusion(2, config_.channels, fusion, config_, rz);
      }
    }
    Rng rd = derive_rng(seed, stream + 2);
    p.denoiser = Denoiser(denoiser, config_, rd);
    stages_.push_back(std::move(p));
  }
}

ParameterList UnfoldModel::parameters() const {
  ParameterList out;
  for (std::size_t k = 0; k < stages_.size(); ++k) stages_[k].collect(out, "stage" + std::to_string(k));
  return out;
}

Var UnfoldModel::scalar_parameter(int stage, const std::string& name) const {
  const StageParams& p = stages_.at(static_cast<std::size_t>(stage));
  if (name == "eta") return p.eta_raw;
  if (name == "beta") {
    if (!p.beta) throw std::invalid_argument("parameter absent in variant " + to_string(config_.variant) + ": beta");
    return *p.beta;
  }
  throw std::invalid_argument("unknown stage scalar '" + name + "'");
}

UnfoldModel make_variant(const UnfoldConfig& config, std::uint64_t seed) { return UnfoldModel(config, seed); }

Var run_model(const KSpaceMeasurement& y, const ForwardOperator& op, const UnfoldConfig& config,
              std::span<const StageParams> params, const RunOptions& options) {
  if (params.size() != static_cast<std::size_t>(config.num_stages)) {
    throw std::invalid_argument("run_model: expected " + std::to_string(config.num_stages) + " stage parameter sets, got " +
                                std::to_string(params.size()));
  }
  if (y.height != op.height() || y.width != op.width()) throw std::invalid_argument("run_model: measurement/mask mismatch");
  StageState state = lift(op.adjoint(y), config.channels);
  for (int k = 0; k < config.num_stages; ++k) {
    if (std::find(options.bypass.begin(), options.bypass.end(), k) != options.bypass.end()) {
      ++state.stage_index;
      continue;
    }
    state = run_stage(config.variant, state, params[k], y, op);
    for (const Var* v : {&state.x, &state.z, &state.z_hat}) {
      if (!v->value().all_finite()) {
        throw std::runtime_error("run_model: non-finite values produced by stage " + std::to_string(k));
      }
    }
  }
  return pair_mean(state.z);
}

Var run_model(const KSpaceMeasurement& y, const ForwardOperator& op, const UnfoldModel& model,
              const RunOptions& options) {
  return run_model(y, op, model.config(), model.stages(), options);
}

ComplexImage reconstruct(const KSpaceMeasurement& y, const ForwardOperator& op, const UnfoldModel& model) {
  NoGradGuard guard;
  return pair_tensor_to_image(run_model(y, op, model).value());
}

}  // namespace unfmri
