#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "flowlab/mixture.hpp"
#include "flowlab/rng.hpp"

namespace flowlab {

enum class LatentKind : std::int64_t { kAbsolute = 0, kDelta = 1 };

struct ScriptEntry {
  int regime;
  int start;
};
using Script = std::vector<ScriptEntry>;

// The per-sequence conditioning: a regime script covering [0, T) that embeds
// as per-frame one-hot vectors.
struct ConditionEmbedding {
  Script script;

  // Throws when the script leaves gaps or overlaps on [0, T).
  void validate(int total_frames) const;
  // T x M one-hot rows; empty script yields a T x 0 matrix.
  Mat per_frame(int total_frames, int n_regimes) const;
  int regime_at(int frame) const;
  bool empty() const { return script.empty(); }
};

struct LatentSequence {
  Mat latents;  // T x D
  std::vector<LatentKind> kinds;
  ConditionEmbedding condition;

  int length() const { return static_cast<int>(latents.rows()); }
};

// Synthetic world: M regimes, each a mixture over frame space plus a shared
// mean-reverting drift toward the nearest mode of the active regime.
struct RegimeGrammar {
  std::vector<GaussianMixture> regimes;
  Eigen::MatrixXi transitions;  // M x M, nonzero = allowed successor
  int dwell_min = 10;
  int dwell_max = 24;
  double drift_rate = 0.6;    // fraction of the gap closed per frame
  double drift_noise = -1.0;  // per-dim step noise; < 0 derives the value that
                              // makes the stationary spread match the mixture

  int n_regimes() const { return static_cast<int>(regimes.size()); }
  int dim() const { return regimes.empty() ? 0 : regimes[0].dim(); }
  double noise_std() const;

  // Hard invariant violations throw; soft issues (e.g. a regime no transition
  // can enter) come back as warnings.
  std::vector<std::string> validate() const;

  // Stationary distribution of the regime chain (power iteration).
  Vec stationary_distribution() const;

  // Frame marginal pooled over regimes, weighted by the stationary
  // distribution; reference for the short pool's analytic marginal.
  GaussianMixture pooled_frame_mixture() const;

  nlohmann::json to_json() const;
  static RegimeGrammar from_json(const nlohmann::json& j);
};

struct WorldConfig {
  int n_regimes = 4;
  int dim = 2;
  double radius = 2.5;
  double sigma = 0.25;
  int t_long = 64;
  int window = 16;
  int dwell_min = 10;
  int dwell_max = 24;
  double drift_rate = 0.6;

  nlohmann::json to_json() const;
  static WorldConfig from_json(const nlohmann::json& j);
};

// Default world: regime m owns an antipodal pair of isotropic modes on a
// circle, so per-regime frame marginals are bimodal and regime identity is
// separable. All transitions to other regimes allowed.
RegimeGrammar make_default_grammar(const WorldConfig& cfg);

struct LongSample {
  Mat frames;  // T x D
  Script script;
};

LongSample sample_long(const RegimeGrammar& grammar, int t_long, std::uint64_t seed);

// Clips cut from fresh long rollouts at uniform offsets, scripts discarded.
std::vector<Mat> sample_short_pool(const RegimeGrammar& grammar, int clip_frames, int n,
                                   std::uint64_t seed, int t_long);

// Delta codec: first latent is the absolute frame, the rest are successive
// differences.
LatentSequence encode(const Mat& frames);
Mat decode(const LatentSequence& seq);

// Per-frame max-posterior regime assignment over all regimes' components,
// median-smoothed over `smooth_window` frames (0 or 1 disables smoothing).
std::vector<int> regime_classify(const Mat& frames, const RegimeGrammar& grammar,
                                 int smooth_window = 5);

struct CorpusRecord {
  LatentSequence seq;
  std::uint64_t seed = 0;
};

struct DataSplit {
  std::vector<CorpusRecord> long_train;
  std::vector<CorpusRecord> short_pool;
  std::vector<CorpusRecord> held_out;
};

struct DataConfig {
  int n_long = 32;
  int n_short = 10000;
  int n_heldout = 64;
  int short_clip_frames = 0;  // 0 -> window + 1 (teacher clip length)

  nlohmann::json to_json() const;
  static DataConfig from_json(const nlohmann::json& j);
};

DataSplit make_split(const RegimeGrammar& grammar, const WorldConfig& wcfg, const DataConfig& dcfg,
                     std::uint64_t seed);

void save_corpus(const std::filesystem::path& path, const std::vector<CorpusRecord>& records,
                 const nlohmann::json& meta);
std::vector<CorpusRecord> load_corpus(const std::filesystem::path& path, nlohmann::json* meta_out = nullptr);

}  // namespace flowlab
