#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "difattack/attack.hpp"
#include "difattack/classifier.hpp"
#include "difattack/dataset.hpp"
#include "difattack/disentangle.hpp"

namespace difattack {

enum class Method { DifAttack, NesBaseline };
const char* to_string(Method m);
Method method_from_string(const std::string& s);

/// What to do with images the victim already gets "wrong" before any perturbation
/// (misclassified when untargeted, already the target when targeted).
enum class Preclassified {
  Skip,   // leave them out of the ASR denominator (default)
  Count,  // count them as successes at q = 0
  Attack  // no clean check at all; attack every image
};

struct EvalConfig {
  AttackConfig attack;
  int max_images = 100;  // attempted images, taken in dataset order
  int workers = 0;       // 0: hardware concurrency
  Preclassified preclassified = Preclassified::Skip;
  bool check_constraints = true;  // wrap each oracle in a ConstraintCheckingOracle
  std::string trace_dir;          // optional: one JSONL file of traces per row
};

/// A victim is reached only through oracles; each worker gets its own.
struct Victim {
  std::string name;
  std::function<std::unique_ptr<ScoreOracle>()> make_oracle;
};
Victim in_process_victim(const ClassifierSpec& c, ScoreMode mode = ScoreMode::Logits);

struct ImageOutcome {
  int index = 0;  // position in the dataset
  bool success = false;
  bool preclassified = false;
  bool aborted = false;
  long queries = 0;
  float linf = 0.0f;
  float l2 = 0.0f;
  std::vector<TracePoint> trace;
};

struct EvalRow {
  std::string method;
  std::string victim;
  int images = 0;
  int successes = 0;
  double asr = 0.0;                 // percent
  std::optional<double> avg_q;      // over successes only; empty when there are none
  std::optional<double> mean_linf;  // over successes
  std::optional<double> mean_l2;
  friend bool operator==(const EvalRow&, const EvalRow&) = default;
};

struct EvalReport {
  std::string title;
  std::vector<EvalRow> rows;
  std::vector<std::vector<ImageOutcome>> outcomes;  // parallel to rows; not serialised
  std::vector<std::pair<std::string, std::string>> config;
};

/// Aggregates per-image outcomes into one row.
EvalRow summarise(const std::string& method, const std::string& victim, const std::vector<ImageOutcome>& outcomes);

/// One row per victim. Targeted runs skip images whose label is the target.
EvalReport evaluate_attack(Method method, const std::vector<Victim>& victims, const Dataset& data,
                           const EvalConfig& cfg, const AutoencoderG* g = nullptr);

/// Throws when the class universes overlap or any evaluation image also appears
/// in the training set of g and the surrogates.
void check_open_set(const Dataset& train_a, const Dataset& eval_b);

/// Both methods against a victim from the other universe.
EvalReport open_set_eval(const AutoencoderG& g, const Dataset& train_a, const ClassifierSpec& victim_b,
                         const Dataset& eval_b, const EvalConfig& cfg);

/// Everything the ablations share. Trained autoencoders are cached in
/// `cache_dir` (when set) under their variant name and seed.
struct AblationSetup {
  const Dataset* train = nullptr;
  const Dataset* eval = nullptr;
  std::vector<ClassifierSpec> zoo;
  ClassifierSpec victim;
  AutoencoderConfig ae;
  std::uint64_t ae_seed = 0;
  TrainConfig train_cfg;
  EvalConfig eval_cfg;
  std::string cache_dir;
  int recon_images = 100;
};

AutoencoderG obtain_autoencoder(const AblationSetup& s, const std::string& variant, DfMode mode,
                                WhiteBoxMethod wb);

/// Mean per-image l2 between x and its reconstruction.
double mean_reconstruction_l2(const AutoencoderG& g, const Dataset& data, int max_images, int batch_size = 100);

struct DfAblation {
  double recon_with_df = 0.0;
  double recon_without_df = 0.0;
  EvalReport report;  // rows "w/ DF" then "w/o DF"
};
DfAblation ablation_df(const AblationSetup& s);

struct TauRow {
  int tau = 0;
  EvalRow row;
};
std::vector<TauRow> ablation_tau(const AutoencoderG& g, const ClassifierSpec& victim, const Dataset& eval,
                                 const EvalConfig& cfg, const std::vector<int>& grid);

/// Autoencoders trained on PGD, MI-FGSM and mixed pairs, attacked identically.
EvalReport ablation_whitebox(const AblationSetup& s);

/// Classifier from `cache_dir` when present, otherwise trained (and stored).
ClassifierSpec obtain_classifier(const std::string& id, const Dataset& train, int num_classes, std::uint64_t seed,
                                 const ClassifierTrainConfig& cfg, const std::string& cache_dir);

enum class ReportFormat { Csv, Markdown };

std::string render_report(const EvalReport& r, ReportFormat f);
void write_report(const std::string& path, const EvalReport& r, ReportFormat f);
/// Rows of a CSV written by render_report; '#' lines are skipped.
std::vector<EvalRow> parse_report_csv(const std::string& text);
/// The metric columns shown per row.
const std::vector<std::string>& report_metrics();

}  // namespace difattack
