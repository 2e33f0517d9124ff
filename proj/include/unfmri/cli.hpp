#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "unfmri/config.hpp"
#include "unfmri/train_eval.hpp"

namespace unfmri::cli {

/// Process exit codes. 1 is reserved for unexpected internal failures.
enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kUsage = 2,        // bad flags or configuration
  kIo = 3,           // unreadable/unwritable or malformed files
  kNonFinite = 4,    // training diverged (also: any ablation variant failed)
  kMismatch = 5,     // checkpoint/mask/measurement disagree
  kChecksFailed = 6  // verification battery reported failures
};

class MismatchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Entry point; args exclude the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

// ---- pieces shared with tests ----------------------------------------------------------------

/// k-space measurement file: complex (H, W) container in unshifted frequency order.
void save_measurement(const std::filesystem::path& path, const KSpaceMeasurement& y);
KSpaceMeasurement load_measurement(const std::filesystem::path& path, const ForwardOperator& op);

/// Split scored in reports: test when present, else validation, else training.
const std::vector<Sample>& evaluation_split(const RunData& data);

struct AblationRow {
  Variant variant = Variant::Gahqs;
  bool ok = false;
  std::string error;
  std::size_t parameter_count = 0;
  ReconstructionReport report;
  std::vector<EpochRecord> trace;
};

using AblationProgress = std::function<void(const AblationRow&)>;

/// Trains every listed variant with the shared seed and budget and scores the best snapshot.
/// A failing variant is recorded and the sweep continues.
std::vector<AblationRow> run_ablation(const RunConfig& config, const RunData& data,
                                      const AblationProgress& progress = {});
std::string format_ablation_table(const std::vector<AblationRow>& rows);

/// Per-sample lines (`sample id psnr ssim ...`) of a report file.
std::vector<SampleMetrics> parse_report(const std::string& text);

/// Linear-interpolation percentile (Hyndman-Fan type 7) of unsorted values, p in [0, 1].
double percentile(std::vector<double> values, double p);

struct BoxSummary {
  std::size_t count = 0;
  double min = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double max = 0.0;
  double mean = 0.0;
};

BoxSummary box_summary(const std::vector<double>& values);

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

std::string line_plot_svg(const std::vector<Series>& series, const std::string& title, const std::string& x_label,
                          const std::string& y_label);
std::string box_plot_svg(const std::vector<std::pair<std::string, BoxSummary>>& boxes, const std::string& title);

}  // namespace unfmri::cli
