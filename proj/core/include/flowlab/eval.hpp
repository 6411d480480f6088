#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "flowlab/windows.hpp"
#include "flowlab/world.hpp"

namespace flowlab {

// Decoded generated sequences plus the scripts they were conditioned on.
struct SampleArchive {
  struct Item {
    Mat frames;  // T x D, decoded
    Script script;
    std::uint64_t seed = 0;
  };
  std::vector<Item> items;
  int nfe = 0;
  std::string head = "dm";
  std::string checkpoint_hash;
  nlohmann::json extra;

  void save(const std::filesystem::path& path) const;
  static SampleArchive load(const std::filesystem::path& path);
};

struct EvalConfig {
  int window = 16;
  int stride = 0;            // 0 -> window
  int min_samples = 100;
  int boundary_exclusion = 2;
  int min_window_start = 0;  // restrict local fidelity to windows with k >= this
  int max_windows_per_stratum = 4000;
  int smooth_window = 5;
};

// Mean per-regime energy distance between generated windows and reference
// windows, in decoded frame space. Windows are assigned to the regime that
// covers the majority of their frames under their own script.
double local_fidelity(const std::vector<SampleArchive::Item>& samples,
                      const std::vector<SampleArchive::Item>& reference,
                      const RegimeGrammar& grammar, const EvalConfig& cfg);

// Fraction of frames whose classified regime matches the script, excluding
// +/- boundary_exclusion frames around scripted transitions.
double global_consistency(const std::vector<SampleArchive::Item>& samples,
                          const RegimeGrammar& grammar, const EvalConfig& cfg);

double dynamic_degree(const std::vector<SampleArchive::Item>& samples);

// Fraction of samples (rows) within 3 sigma of their nearest component mean.
// Requires separated modes: min pairwise mean distance >= 6 sigma.
double mode_commitment(const Mat& samples, const GaussianMixture& gmm);

struct EvalReport {
  double local_fidelity = 0.0;
  double global_consistency = 0.0;
  double dynamic_degree = 0.0;
  double mode_commitment = 0.0;
  int nfe_used = 0;
  int n_samples = 0;
  std::string head;
  std::string checkpoint_hash;
  std::vector<std::string> gaps;  // metrics omitted and why

  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
};

EvalReport evaluate_archive(const SampleArchive& archive,
                            const std::vector<CorpusRecord>& reference,
                            const RegimeGrammar& grammar, const EvalConfig& cfg);

struct ReportRow {
  std::string name;
  EvalReport report;
  double combined_score = 0.0;  // filled by make_report
  int rank = 0;
};

// Combined score: mean of min-max-normalized (inverted) local fidelity and
// global consistency across the compared rows; meaningful only within one
// report. Rows come back sorted best-first with ranks.
std::vector<ReportRow> make_report(std::vector<ReportRow> rows);

std::string report_csv(const std::vector<ReportRow>& rows);
std::string report_text(const std::vector<ReportRow>& rows);

}  // namespace flowlab
