#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "unfmri/data.hpp"
#include "unfmri/unfold.hpp"

namespace unfmri {

// ---- metrics ------------------------------------------------------------------------------

inline constexpr double kPsnrCap = 100.0;

/// PSNR of magnitude images with data range max(truth); identical inputs give kPsnrCap.
double psnr(std::span<const double> recon, std::span<const double> truth);
double psnr(const ComplexImage& recon, const ComplexImage& truth);

/// Mean SSIM over valid 11x11 gaussian (sigma 1.5) windows of magnitude images, L = max(truth).
double ssim(std::span<const double> recon, std::span<const double> truth, int height, int width);
double ssim(const ComplexImage& recon, const ComplexImage& truth);

// ---- training -------------------------------------------------------------------------------

enum class LossKind { L1, L2 };

std::string to_string(LossKind k);
LossKind parse_loss(const std::string& name);

struct TrainConfig {
  int epochs = 30;
  int batch_size = 2;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  LossKind loss = LossKind::L1;
  std::uint64_t seed = 0;
  int checkpoint_every = 1;
  int max_steps = 0;  // 0 = no cap; otherwise training stops after this many optimizer steps

  void validate() const;
};

/// Adam over a fixed parameter list.
class Adam {
 public:
  Adam(ParameterList params, double lr, double beta1, double beta2, double epsilon);

  void zero_grad();
  void step();
  long steps() const { return t_; }

 private:
  ParameterList params_;
  std::vector<Tensor> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
};

struct MaskSpec {
  MaskKind kind = MaskKind::Radial;
  int acceleration = 4;
  std::uint64_t seed = 0;
  int acs_lines = -1;  // -1 selects the kind's default

  UndersamplingMask build(int height, int width) const;
};

struct EpochRecord {
  int epoch = 0;
  long steps = 0;
  double train_loss = 0.0;
  double val_psnr = 0.0;
  double val_ssim = 0.0;
};

using ParameterSnapshot = std::vector<std::pair<std::string, Tensor>>;

ParameterSnapshot snapshot(const UnfoldModel& model);
void restore(UnfoldModel& model, const ParameterSnapshot& snap);

struct TrainResult {
  std::vector<EpochRecord> trace;
  std::vector<double> step_losses;
  ParameterSnapshot best;
  int best_epoch = 0;  // 0 when no epoch ran (best = initial parameters)
};

class NonFiniteLossError : public std::runtime_error {
 public:
  NonFiniteLossError(int epoch, int batch);
  int epoch() const { return epoch_; }
  int batch() const { return batch_; }

 private:
  int epoch_;
  int batch_;
};

/// Loss between |recon| and |truth| (mean over pixels).
Var reconstruction_loss(const Var& recon_pair, const ComplexImage& truth, LossKind kind);

/// Called after every epoch with the record; used for periodic checkpointing.
using EpochCallback = std::function<void(const EpochRecord&, const UnfoldModel&)>;

/// Adam training with deterministic per-epoch shuffling. The model is left holding the final
/// parameters; the best validation snapshot is returned alongside the trace. An empty
/// validation set falls back to scoring the training set.
TrainResult train(UnfoldModel& model, const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                  const MaskSpec& mask_spec, const TrainConfig& config, const EpochCallback& on_epoch = {});

/// True if record a is a better validation result than b (PSNR, then SSIM, then earlier epoch).
bool better_record(const EpochRecord& a, const EpochRecord& b);

// ---- evaluation -----------------------------------------------------------------------------

struct SampleMetrics {
  std::string id;
  double psnr = 0.0;
  double ssim = 0.0;
  double zero_filled_psnr = 0.0;
  double zero_filled_ssim = 0.0;
};

struct ReconstructionReport {
  std::vector<SampleMetrics> samples;
  std::vector<std::vector<double>> error_maps;  // |recon| - |truth| absolute, per sample
  std::vector<EpochRecord> convergence_trace;
  std::size_t parameter_count = 0;
  std::string config_hash;
  int height = 0;
  int width = 0;

  double mean_psnr() const;
  double mean_ssim() const;
  double mean_zero_filled_psnr() const;
  double mean_zero_filled_ssim() const;
  std::vector<double> psnr_values() const;
  std::vector<double> ssim_values() const;
};

ReconstructionReport evaluate(const UnfoldModel& model, const std::vector<Sample>& samples,
                              const UndersamplingMask& mask);

/// One `sample id psnr ssim zf_psnr zf_ssim` record per line after a commented header.
std::string format_report(const ReconstructionReport& report);
/// Epoch trace as whitespace-separated columns: epoch psnr ssim train_loss steps.
std::string format_trace(const std::vector<EpochRecord>& trace);
std::vector<EpochRecord> parse_trace(const std::string& text);

/// 64-bit FNV-1a digest rendered as 16 hex digits.
std::string fnv1a_hex(std::string_view text);

// ---- gradient checks -------------------------------------------------------------------------

struct GradCheckConfig {
  int height = 8;
  int width = 8;
  int channels = 8;
  int num_splits = 2;
  int window = 4;
  int heads = 2;
  int samples = 24;  // parameter entries compared
  double step = 1e-5;
  double abs_floor = 1e-5;  // relative error denominator floor (finite-difference resolution)
  std::uint64_t seed = 0;
  bool zero_corner = false;  // zero input and parameters; only finiteness is meaningful
};

struct GradCheckEntry {
  std::string parameter;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  std::string module;
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  bool all_finite = true;

  bool passed(double tolerance) const { return all_finite && max_rel_error <= tolerance; }
};

/// Central finite differences against reverse-mode gradients of a random projection of the
/// module output. module: pgsa, msst, stage, full_model.
GradCheckReport gradient_check(const std::string& module, const GradCheckConfig& config = {});

/// Shared core: compares gradients of <projection, output()> w.r.t. sampled entries of `params`.
GradCheckReport check_gradients(const std::string& name, const ParameterList& params,
                                const std::function<Var()>& output, const Tensor& projection,
                                const GradCheckConfig& config);

}  // namespace unfmri
