#include "flowlab/world.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "flowlab/container.hpp"
#include "flowlab/errors.hpp"

namespace flowlab {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

void ConditionEmbedding::validate(int total_frames) const {
  if (script.empty()) return;
  int expected = 0;
  for (std::size_t i = 0; i < script.size(); ++i) {
    if (script[i].start != expected)
      throw InputError("script does not tile [0,T): segment " + std::to_string(i) +
                       " starts at " + std::to_string(script[i].start) + ", expected " +
                       std::to_string(expected));
    const int end = i + 1 < script.size() ? script[i + 1].start : total_frames;
    if (end <= script[i].start) throw InputError("script segment with non-positive length");
    expected = end;
  }
  if (expected != total_frames) throw InputError("script does not cover [0,T)");
}

int ConditionEmbedding::regime_at(int frame) const {
  int r = -1;
  for (const auto& e : script) {
    if (e.start <= frame) r = e.regime;
  }
  return r;
}

Mat ConditionEmbedding::per_frame(int total_frames, int n_regimes) const {
  if (script.empty()) return Mat(total_frames, 0);
  validate(total_frames);
  Mat c = Mat::Zero(total_frames, n_regimes);
  for (int f = 0; f < total_frames; ++f) c(f, regime_at(f)) = 1.0;
  return c;
}

double RegimeGrammar::noise_std() const {
  if (drift_noise >= 0.0) return drift_noise;
  // Match the OU stationary spread to the regime mixtures' sigma so the
  // within-regime frame marginal reproduces the nominal mixture.
  double sigma2 = 0.0;
  for (const auto& g : regimes) sigma2 = std::max(sigma2, g.variances.maxCoeff());
  return std::sqrt(sigma2 * drift_rate * (2.0 - drift_rate));
}

std::vector<std::string> RegimeGrammar::validate() const {
  if (regimes.empty()) throw InputError("grammar: no regimes");
  const int m = n_regimes();
  if (transitions.rows() != m || transitions.cols() != m)
    throw InputError("grammar: transition table must be M x M");
  for (int r = 0; r < m; ++r) {
    bool any = false;
    for (int c = 0; c < m; ++c) any = any || transitions(r, c) != 0;
    if (!any) throw InputError("grammar: regime " + std::to_string(r) + " has no successor");
  }
  if (dwell_min < 2) throw InputError("grammar: dwell_min must be >= 2");
  if (dwell_max < dwell_min) throw InputError("grammar: dwell_max < dwell_min");
  if (drift_rate <= 0.0 || drift_rate > 1.0) throw InputError("grammar: drift_rate in (0,1]");

  std::vector<std::string> warnings;
  for (int c = 0; c < m; ++c) {
    bool entered = false;
    for (int r = 0; r < m; ++r) entered = entered || (r != c && transitions(r, c) != 0);
    if (!entered)
      warnings.push_back("regime " + std::to_string(c) +
                         " is never entered by a transition (appears only as a start regime)");
  }
  return warnings;
}

Vec RegimeGrammar::stationary_distribution() const {
  const int m = n_regimes();
  Mat p = Mat::Zero(m, m);
  for (int r = 0; r < m; ++r) {
    double row = 0.0;
    for (int c = 0; c < m; ++c) row += transitions(r, c) != 0 ? 1.0 : 0.0;
    for (int c = 0; c < m; ++c) p(r, c) = transitions(r, c) != 0 ? 1.0 / row : 0.0;
  }
  Vec pi = Vec::Constant(m, 1.0 / m);
  for (int it = 0; it < 10000; ++it) {
    Vec next = p.transpose() * pi;
    next /= next.sum();
    if ((next - pi).cwiseAbs().maxCoeff() < 1e-14) {
      pi = next;
      break;
    }
    pi = next;
  }
  return pi;
}

GaussianMixture RegimeGrammar::pooled_frame_mixture() const {
  const Vec pi = stationary_distribution();
  int total = 0;
  for (const auto& g : regimes) total += g.n_components();
  Vec w(total);
  Mat mu(total, dim()), var(total, dim());
  int row = 0;
  for (int r = 0; r < n_regimes(); ++r) {
    const auto& g = regimes[static_cast<std::size_t>(r)];
    for (int c = 0; c < g.n_components(); ++c) {
      w(row) = pi(r) * g.weights(c);
      mu.row(row) = g.means.row(c);
      var.row(row) = g.variances.row(c);
      ++row;
    }
  }
  w /= w.sum();
  return GaussianMixture(w, mu, var);
}

nlohmann::json RegimeGrammar::to_json() const {
  nlohmann::json j;
  j["regimes"] = nlohmann::json::array();
  for (const auto& g : regimes) j["regimes"].push_back(g.to_json());
  std::vector<std::vector<int>> t;
  for (Eigen::Index r = 0; r < transitions.rows(); ++r) {
    std::vector<int> row(static_cast<std::size_t>(transitions.cols()));
    for (Eigen::Index c = 0; c < transitions.cols(); ++c) row[static_cast<std::size_t>(c)] = transitions(r, c);
    t.push_back(std::move(row));
  }
  j["transitions"] = t;
  j["dwell_min"] = dwell_min;
  j["dwell_max"] = dwell_max;
  j["drift_rate"] = drift_rate;
  j["drift_noise"] = drift_noise;
  return j;
}

RegimeGrammar RegimeGrammar::from_json(const nlohmann::json& j) {
  RegimeGrammar g;
  for (const auto& r : j.at("regimes")) g.regimes.push_back(GaussianMixture::from_json(r));
  const auto t = j.at("transitions").get<std::vector<std::vector<int>>>();
  const int m = static_cast<int>(t.size());
  g.transitions.resize(m, m);
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < m; ++c) g.transitions(r, c) = t[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
  g.dwell_min = j.value("dwell_min", 10);
  g.dwell_max = j.value("dwell_max", 24);
  g.drift_rate = j.value("drift_rate", 0.6);
  g.drift_noise = j.value("drift_noise", -1.0);
  g.validate();
  return g;
}

nlohmann::json WorldConfig::to_json() const {
  return {{"n_regimes", n_regimes}, {"dim", dim},           {"radius", radius},
          {"sigma", sigma},         {"t_long", t_long},     {"window", window},
          {"dwell_min", dwell_min}, {"dwell_max", dwell_max}, {"drift_rate", drift_rate}};
}

WorldConfig WorldConfig::from_json(const nlohmann::json& j) {
  WorldConfig c;
  c.n_regimes = j.value("n_regimes", c.n_regimes);
  c.dim = j.value("dim", c.dim);
  c.radius = j.value("radius", c.radius);
  c.sigma = j.value("sigma", c.sigma);
  c.t_long = j.value("t_long", c.t_long);
  c.window = j.value("window", c.window);
  c.dwell_min = j.value("dwell_min", c.dwell_min);
  c.dwell_max = j.value("dwell_max", c.dwell_max);
  c.drift_rate = j.value("drift_rate", c.drift_rate);
  return c;
}

RegimeGrammar make_default_grammar(const WorldConfig& cfg) {
  if (cfg.dim < 2) throw ConfigError("default grammar requires dim >= 2");
  RegimeGrammar g;
  const int m = cfg.n_regimes;
  for (int r = 0; r < m; ++r) {
    // Antipodal mode pair per regime: 2M distinct modes on the circle.
    const double ang = 2.0 * kPi * r / (2.0 * m);
    Vec w(2);
    w << 0.5, 0.5;
    Mat mu = Mat::Zero(2, cfg.dim);
    mu(0, 0) = cfg.radius * std::cos(ang);
    mu(0, 1) = cfg.radius * std::sin(ang);
    mu.row(1) = -mu.row(0);
    Mat var = Mat::Constant(2, cfg.dim, cfg.sigma * cfg.sigma);
    g.regimes.emplace_back(w, mu, var);
  }
  g.transitions = Eigen::MatrixXi::Ones(m, m);
  if (m > 1) g.transitions.diagonal().setZero();
  g.dwell_min = cfg.dwell_min;
  g.dwell_max = cfg.dwell_max;
  g.drift_rate = cfg.drift_rate;
  g.validate();
  return g;
}

namespace {

int nearest_mode(const GaussianMixture& g, const Vec& x) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int c = 0; c < g.n_components(); ++c) {
    const double d = (g.means.row(c).transpose() - x).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

Script draw_script(const RegimeGrammar& grammar, int t_long, Rng& rng) {
  Script script;
  const int m = grammar.n_regimes();
  int frame = 0;
  int regime = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(m)));
  while (frame < t_long) {
    script.push_back({regime, frame});
    const int dwell = grammar.dwell_min +
                      static_cast<int>(rng.uniform_index(
                          static_cast<std::uint64_t>(grammar.dwell_max - grammar.dwell_min + 1)));
    frame += dwell;
    // successor uniform over allowed transitions
    std::vector<int> allowed;
    for (int c = 0; c < m; ++c)
      if (grammar.transitions(regime, c) != 0) allowed.push_back(c);
    regime = allowed[rng.uniform_index(allowed.size())];
  }
  return script;
}

}  // namespace

LongSample sample_long(const RegimeGrammar& grammar, int t_long, std::uint64_t seed) {
  grammar.validate();
  if (t_long < 2) throw InputError("sample_long: t_long too small");
  Rng rng(seed);
  const Script script = draw_script(grammar, t_long, rng);
  ConditionEmbedding cond{script};
  cond.validate(t_long);

  const int d = grammar.dim();
  const double eta = grammar.drift_rate;
  const double nu = grammar.noise_std();
  Mat frames(t_long, d);

  const auto& first = grammar.regimes[static_cast<std::size_t>(script[0].regime)];
  frames.row(0) = first.sample(rng).transpose();
  for (int f = 1; f < t_long; ++f) {
    const int regime = cond.regime_at(f);
    const auto& g = grammar.regimes[static_cast<std::size_t>(regime)];
    const Vec prev = frames.row(f - 1).transpose();
    const Vec target = g.means.row(nearest_mode(g, prev)).transpose();
    Vec next = prev + eta * (target - prev);
    for (int k = 0; k < d; ++k) next(k) += nu * rng.normal();
    frames.row(f) = next.transpose();
  }
  return LongSample{std::move(frames), script};
}

std::vector<Mat> sample_short_pool(const RegimeGrammar& grammar, int clip_frames, int n,
                                   std::uint64_t seed, int t_long) {
  if (n < 1) throw InputError("sample_short_pool: n >= 1 required");
  if (clip_frames > t_long) throw InputError("sample_short_pool: clip longer than rollout");
  Rng rng(seed);
  std::vector<Mat> clips;
  clips.reserve(static_cast<std::size_t>(n));
  const int clips_per_rollout = 4;
  Mat frames;
  int used = clips_per_rollout;  // force a rollout on first iteration
  std::uint64_t rollout_idx = 0;
  while (static_cast<int>(clips.size()) < n) {
    if (used >= clips_per_rollout) {
      frames = sample_long(grammar, t_long, mix_seed(seed, 1000 + rollout_idx++)).frames;
      used = 0;
    }
    const int max_off = t_long - clip_frames;
    const int off = max_off > 0 ? static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(max_off + 1))) : 0;
    clips.push_back(frames.middleRows(off, clip_frames));
    ++used;
  }
  return clips;
}

LatentSequence encode(const Mat& frames) {
  if (frames.rows() < 1) throw InputError("encode: need at least one frame");
  LatentSequence seq;
  seq.latents.resize(frames.rows(), frames.cols());
  seq.latents.row(0) = frames.row(0);
  seq.kinds.assign(static_cast<std::size_t>(frames.rows()), LatentKind::kDelta);
  seq.kinds[0] = LatentKind::kAbsolute;
  for (Eigen::Index i = 1; i < frames.rows(); ++i)
    seq.latents.row(i) = frames.row(i) - frames.row(i - 1);
  return seq;
}

Mat decode(const LatentSequence& seq) {
  if (seq.latents.rows() < 1) throw InputError("decode: empty sequence");
  if (seq.kinds.size() != static_cast<std::size_t>(seq.latents.rows()))
    throw InputError("decode: kinds length mismatch");
  if (seq.kinds[0] != LatentKind::kAbsolute)
    throw InputError("decode: malformed sequence, first latent must be absolute");
  Mat frames(seq.latents.rows(), seq.latents.cols());
  frames.row(0) = seq.latents.row(0);
  for (Eigen::Index i = 1; i < seq.latents.rows(); ++i)
    frames.row(i) = frames.row(i - 1) + seq.latents.row(i);
  return frames;
}

std::vector<int> regime_classify(const Mat& frames, const RegimeGrammar& grammar,
                                 int smooth_window) {
  const int t = static_cast<int>(frames.rows());
  std::vector<int> raw(static_cast<std::size_t>(t));
  for (int f = 0; f < t; ++f) {
    const Vec x = frames.row(f).transpose();
    double best = -std::numeric_limits<double>::infinity();
    int best_regime = 0;
    for (int r = 0; r < grammar.n_regimes(); ++r) {
      const auto& g = grammar.regimes[static_cast<std::size_t>(r)];
      for (int c = 0; c < g.n_components(); ++c) {
        double lp = std::log(g.weights(c));
        for (int k = 0; k < g.dim(); ++k) {
          const double var = g.variances(c, k);
          const double rr = x(k) - g.means(c, k);
          lp += -0.5 * (std::log(var) + rr * rr / var);
        }
        if (lp > best) {
          best = lp;
          best_regime = r;
        }
      }
    }
    raw[static_cast<std::size_t>(f)] = best_regime;
  }
  if (smooth_window <= 1) return raw;

  std::vector<int> smooth(raw.size());
  const int half = smooth_window / 2;
  std::vector<int> buf;
  for (int f = 0; f < t; ++f) {
    buf.clear();
    for (int j = std::max(0, f - half); j <= std::min(t - 1, f + half); ++j)
      buf.push_back(raw[static_cast<std::size_t>(j)]);
    std::nth_element(buf.begin(), buf.begin() + buf.size() / 2, buf.end());
    smooth[static_cast<std::size_t>(f)] = buf[buf.size() / 2];
  }
  return smooth;
}

nlohmann::json DataConfig::to_json() const {
  return {{"n_long", n_long},
          {"n_short", n_short},
          {"n_heldout", n_heldout},
          {"short_clip_frames", short_clip_frames}};
}

DataConfig DataConfig::from_json(const nlohmann::json& j) {
  DataConfig c;
  c.n_long = j.value("n_long", c.n_long);
  c.n_short = j.value("n_short", c.n_short);
  c.n_heldout = j.value("n_heldout", c.n_heldout);
  c.short_clip_frames = j.value("short_clip_frames", c.short_clip_frames);
  return c;
}

DataSplit make_split(const RegimeGrammar& grammar, const WorldConfig& wcfg, const DataConfig& dcfg,
                     std::uint64_t seed) {
  DataSplit split;
  const int clip_frames = dcfg.short_clip_frames > 0 ? dcfg.short_clip_frames : wcfg.window + 1;
  if (wcfg.t_long < 2 * wcfg.window)
    throw ConfigError("world: t_long must be at least twice the window length");

  auto make_long = [&](std::uint64_t s) {
    LongSample ls = sample_long(grammar, wcfg.t_long, s);
    CorpusRecord rec;
    rec.seq = encode(ls.frames);
    rec.seq.condition.script = ls.script;
    rec.seed = s;
    return rec;
  };
  for (int i = 0; i < dcfg.n_long; ++i) split.long_train.push_back(make_long(mix_seed(seed, 10 + i)));
  for (int i = 0; i < dcfg.n_heldout; ++i)
    split.held_out.push_back(make_long(mix_seed(seed, 20000 + i)));

  const auto clips =
      sample_short_pool(grammar, clip_frames, dcfg.n_short, mix_seed(seed, 1), wcfg.t_long);
  for (std::size_t i = 0; i < clips.size(); ++i) {
    CorpusRecord rec;
    rec.seq = encode(clips[i]);
    rec.seed = mix_seed(seed, 1);
    split.short_pool.push_back(std::move(rec));
  }
  return split;
}

void save_corpus(const std::filesystem::path& path, const std::vector<CorpusRecord>& records,
                 const nlohmann::json& meta) {
  Container c;
  c.meta = meta;
  c.meta["kind"] = "corpus";
  c.meta["records"] = records.size();
  std::vector<std::int64_t> seeds;
  char name[64];
  for (std::size_t i = 0; i < records.size(); ++i) {
    std::snprintf(name, sizeof(name), "seq/%06zu", i);
    const std::string base(name);
    c.f64[base + "/latents"] = records[i].seq.latents;
    std::vector<std::int64_t> kinds;
    kinds.reserve(records[i].seq.kinds.size());
    for (LatentKind k : records[i].seq.kinds) kinds.push_back(static_cast<std::int64_t>(k));
    c.i64[base + "/kinds"] = std::move(kinds);
    std::vector<std::int64_t> script;
    for (const auto& e : records[i].seq.condition.script) {
      script.push_back(e.regime);
      script.push_back(e.start);
    }
    c.i64[base + "/script"] = std::move(script);
    seeds.push_back(static_cast<std::int64_t>(records[i].seed));
  }
  c.i64["seeds"] = std::move(seeds);
  c.write(path);
}

std::vector<CorpusRecord> load_corpus(const std::filesystem::path& path, nlohmann::json* meta_out) {
  Container c = Container::read(path);
  if (c.meta.value("kind", "") != "corpus")
    throw DataError("not a corpus container: " + path.string());
  const auto n = c.meta.value("records", std::size_t{0});
  const auto& seeds = c.ints("seeds");
  std::vector<CorpusRecord> records;
  char name[64];
  for (std::size_t i = 0; i < n; ++i) {
    std::snprintf(name, sizeof(name), "seq/%06zu", i);
    const std::string base(name);
    CorpusRecord rec;
    rec.seq.latents = c.mat(base + "/latents");
    for (std::int64_t k : c.ints(base + "/kinds"))
      rec.seq.kinds.push_back(static_cast<LatentKind>(k));
    const auto& script = c.ints(base + "/script");
    for (std::size_t s = 0; s + 1 < script.size(); s += 2)
      rec.seq.condition.script.push_back(
          {static_cast<int>(script[s]), static_cast<int>(script[s + 1])});
    rec.seed = static_cast<std::uint64_t>(seeds[i]);
    records.push_back(std::move(rec));
  }
  if (meta_out != nullptr) *meta_out = c.meta;
  return records;
}

}  // namespace flowlab
