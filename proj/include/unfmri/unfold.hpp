#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "unfmri/kspace.hpp"
#include "unfmri/msst.hpp"
#include "unfmri/pgsa.hpp"

namespace unfmri {

enum class Variant { Hqs, Ahqs, Gahqs, Baseline1, Baseline2, Baseline3 };
enum class DenoiserKind { Msst, ConvUnet, Identity };

std::string to_string(Variant v);
Variant parse_variant(const std::string& name);
std::string to_string(DenoiserKind k);
DenoiserKind parse_denoiser(const std::string& name);

struct UnfoldConfig {
  int num_stages = 8;
  int num_splits = 4;
  int channels = 32;
  Variant variant = Variant::Gahqs;
  int height = 64;
  int width = 64;
  int window = 8;
  int heads = 4;
  int pgsa_groups = 4;
  int reduction = 4;
  std::optional<DenoiserKind> denoiser;  // overrides the variant's denoiser when set

  DenoiserKind resolved_denoiser() const;
  bool has_acceleration() const;
  bool has_fusion() const;
  void validate() const;
};

/// Multi-channel feature triple flowing between stages; channel pairs hold (re, im) planes.
struct StageState {
  Var x;
  Var z;
  Var z_hat;
  int stage_index = 0;
};

class Denoiser {
 public:
  Denoiser() = default;
  Denoiser(DenoiserKind kind, const UnfoldConfig& config, Rng& rng);

  DenoiserKind kind() const;
  Var operator()(const Var& x) const;
  void collect(ParameterList& out, const std::string& prefix) const;
  Msst* msst() { return std::get_if<Msst>(&impl_); }

 private:
  std::variant<std::monostate, Msst, ConvUnet> impl_;
};

enum class FusionKind { Pyramid, SqueezeExcitation, PassThrough };

/// Fuses concatenated stage terms: channel attention over the concatenation, a 1x1
/// convolution back to C channels, plus the plain sum of the terms as a skip path.
class Fusion {
 public:
  Fusion() = default;
  Fusion(int parts, int channels, FusionKind kind, const UnfoldConfig& config, Rng& rng);

  Var forward(std::span<const Var> terms) const;
  FusionKind kind() const { return kind_; }
  /// Degenerate configuration: attention bypassed and the 1x1 map zeroed, leaving the sum.
  void make_pass_through();
  void collect(ParameterList& out, const std::string& prefix) const;
  Pgsa* pgsa() { return kind_ == FusionKind::Pyramid ? &pgsa_ : nullptr; }
  ConvLayer& reduce() { return reduce_; }

 private:
  FusionKind kind_ = FusionKind::PassThrough;
  Pgsa pgsa_;
  SqueezeExcitation se_;
  ConvLayer reduce_;
};

/// Learnable parameters of one stage. eta is stored unconstrained and squashed by a sigmoid.
struct StageParams {
  Var eta_raw;
  std::optional<Var> beta;
  std::optional<Fusion> fusion_x;
  std::optional<Fusion> fusion_z;
  Denoiser denoiser;

  Var eta() const { return sigmoid(eta_raw); }
  void collect(ParameterList& out, const std::string& prefix) const;
};

/// Replicates a complex image into channels/2 (re, im) pairs for x, z and z_hat.
StageState lift(const ComplexImage& x0, int channels);
Tensor lift_tensor(const ComplexImage& image, int channels);
/// Mean of the channel pairs of the calibration node z.
ComplexImage project(const StageState& state);
ComplexImage pair_tensor_to_image(const Tensor& pair);

/// F^H M F applied to every channel pair of a feature tensor.
Var normal_pairs(const ForwardOperator& op, const Var& features);

StageState run_hqs_stage(const StageState& state, const StageParams& params, const KSpaceMeasurement& y,
                         const ForwardOperator& op);
StageState run_ahqs_stage(const StageState& state, const StageParams& params, const KSpaceMeasurement& y,
                          const ForwardOperator& op);
StageState run_gahqs_stage(const StageState& state, const StageParams& params, const KSpaceMeasurement& y,
                           const ForwardOperator& op);
StageState run_stage(Variant variant, const StageState& state, const StageParams& params,
                     const KSpaceMeasurement& y, const ForwardOperator& op);

class UnfoldModel {
 public:
  UnfoldModel(UnfoldConfig config, std::uint64_t seed);

  const UnfoldConfig& config() const { return config_; }
  std::vector<StageParams>& stages() { return stages_; }
  const std::vector<StageParams>& stages() const { return stages_; }
  ParameterList parameters() const;
  std::size_t parameter_count() const { return count_parameters(parameters()); }
  /// Named per-stage scalar ("eta" raw value or "beta"); throws if the variant lacks it.
  Var scalar_parameter(int stage, const std::string& name) const;

 private:
  UnfoldConfig config_;
  std::vector<StageParams> stages_;
};

UnfoldModel make_variant(const UnfoldConfig& config, std::uint64_t seed = 0);

struct RunOptions {
  std::vector<int> bypass;  // stage indices skipped entirely
};

/// Full unrolled reconstruction; returns the (2, H, W) (re, im) pair tensor.
Var run_model(const KSpaceMeasurement& y, const ForwardOperator& op, const UnfoldModel& model,
              const RunOptions& options = {});
Var run_model(const KSpaceMeasurement& y, const ForwardOperator& op, const UnfoldConfig& config,
              std::span<const StageParams> params, const RunOptions& options = {});
ComplexImage reconstruct(const KSpaceMeasurement& y, const ForwardOperator& op, const UnfoldModel& model);

}  // namespace unfmri
