#include "flowlab/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include "flowlab/container.hpp"
#include "flowlab/errors.hpp"

namespace flowlab {

void SampleArchive::save(const std::filesystem::path& path) const {
  Container c;
  c.meta = extra;
  c.meta["kind"] = "archive";
  c.meta["nfe"] = nfe;
  c.meta["head"] = head;
  c.meta["checkpoint_hash"] = checkpoint_hash;
  c.meta["records"] = items.size();
  std::vector<std::int64_t> seeds;
  char name[64];
  for (std::size_t i = 0; i < items.size(); ++i) {
    std::snprintf(name, sizeof(name), "sample/%06zu", i);
    const std::string base(name);
    c.f64[base + "/frames"] = items[i].frames;
    std::vector<std::int64_t> script;
    for (const auto& e : items[i].script) {
      script.push_back(e.regime);
      script.push_back(e.start);
    }
    c.i64[base + "/script"] = std::move(script);
    seeds.push_back(static_cast<std::int64_t>(items[i].seed));
  }
  c.i64["seeds"] = std::move(seeds);
  c.write(path);
}

SampleArchive SampleArchive::load(const std::filesystem::path& path) {
  Container c = Container::read(path);
  if (c.meta.value("kind", "") != "archive")
    throw DataError("not a sample archive: " + path.string());
  SampleArchive a;
  a.extra = c.meta;
  a.nfe = c.meta.value("nfe", 0);
  a.head = c.meta.value("head", "dm");
  a.checkpoint_hash = c.meta.value("checkpoint_hash", "");
  const auto n = c.meta.value("records", std::size_t{0});
  const auto& seeds = c.ints("seeds");
  char name[64];
  for (std::size_t i = 0; i < n; ++i) {
    std::snprintf(name, sizeof(name), "sample/%06zu", i);
    const std::string base(name);
    Item item;
    item.frames = c.mat(base + "/frames");
    const auto& script = c.ints(base + "/script");
    for (std::size_t s = 0; s + 1 < script.size(); s += 2)
      item.script.push_back({static_cast<int>(script[s]), static_cast<int>(script[s + 1])});
    item.seed = static_cast<std::uint64_t>(seeds[i]);
    a.items.push_back(std::move(item));
  }
  return a;
}

namespace {

// Majority regime of [start, start+len) under the item's script.
int window_regime(const Script& script, int start, int len) {
  ConditionEmbedding cond{script};
  std::map<int, int> counts;
  for (int f = start; f < start + len; ++f) ++counts[cond.regime_at(f)];
  int best = -1, best_n = -1;
  for (const auto& [r, n] : counts)
    if (n > best_n) {
      best_n = n;
      best = r;
    }
  return best;
}

void collect_windows(const std::vector<SampleArchive::Item>& items, const EvalConfig& cfg,
                     std::map<int, std::vector<Eigen::RowVectorXd>>& strata) {
  const int stride = cfg.stride > 0 ? cfg.stride : cfg.window;
  for (const auto& item : items) {
    const int t = static_cast<int>(item.frames.rows());
    for (const WindowSpec& w : enumerate_windows(t, cfg.window, stride)) {
      if (w.start < cfg.min_window_start) continue;
      const Mat win = crop(item.frames, w);
      Eigen::RowVectorXd flat(win.size());
      int idx = 0;
      for (Eigen::Index r = 0; r < win.rows(); ++r)
        for (Eigen::Index col = 0; col < win.cols(); ++col) flat(idx++) = win(r, col);
      const int regime = item.script.empty() ? 0 : window_regime(item.script, w.start, w.length);
      strata[regime].push_back(std::move(flat));
    }
  }
}

Mat stack_rows(const std::vector<Eigen::RowVectorXd>& rows, int cap) {
  const int n = std::min<int>(static_cast<int>(rows.size()), cap);
  Mat m(n, rows[0].size());
  for (int i = 0; i < n; ++i) m.row(i) = rows[static_cast<std::size_t>(i)];
  return m;
}

}  // namespace

double local_fidelity(const std::vector<SampleArchive::Item>& samples,
                      const std::vector<SampleArchive::Item>& reference,
                      const RegimeGrammar& grammar, const EvalConfig& cfg) {
  if (static_cast<int>(samples.size()) < cfg.min_samples)
    throw InputError("local_fidelity: need at least " + std::to_string(cfg.min_samples) +
                     " generated sequences, got " + std::to_string(samples.size()));
  if (reference.empty()) throw InputError("local_fidelity: empty reference");
  (void)grammar;

  std::map<int, std::vector<Eigen::RowVectorXd>> gen, ref;
  collect_windows(samples, cfg, gen);
  collect_windows(reference, cfg, ref);

  double total = 0.0;
  int strata = 0;
  for (const auto& [regime, rows] : gen) {
    auto it = ref.find(regime);
    if (it == ref.end() || rows.empty() || it->second.empty()) continue;
    total += energy_distance(stack_rows(rows, cfg.max_windows_per_stratum),
                             stack_rows(it->second, cfg.max_windows_per_stratum));
    ++strata;
  }
  if (strata == 0) throw InputError("local_fidelity: no common regime strata");
  return total / strata;
}

double global_consistency(const std::vector<SampleArchive::Item>& samples,
                          const RegimeGrammar& grammar, const EvalConfig& cfg) {
  double acc = 0.0;
  int counted_samples = 0;
  for (const auto& item : samples) {
    if (item.script.empty()) continue;
    const int t = static_cast<int>(item.frames.rows());
    const auto classified = regime_classify(item.frames, grammar, cfg.smooth_window);
    ConditionEmbedding cond{item.script};
    // Transition-adjacent frames are genuinely ambiguous; exclude them.
    std::vector<bool> excluded(static_cast<std::size_t>(t), false);
    for (const auto& e : item.script) {
      if (e.start == 0) continue;
      for (int f = e.start - cfg.boundary_exclusion; f <= e.start + cfg.boundary_exclusion; ++f)
        if (f >= 0 && f < t) excluded[static_cast<std::size_t>(f)] = true;
    }
    int match = 0, total = 0;
    for (int f = 0; f < t; ++f) {
      if (excluded[static_cast<std::size_t>(f)]) continue;
      ++total;
      if (classified[static_cast<std::size_t>(f)] == cond.regime_at(f)) ++match;
    }
    if (total > 0) {
      acc += static_cast<double>(match) / total;
      ++counted_samples;
    }
  }
  if (counted_samples == 0) throw InputError("global_consistency: no scripted samples");
  return acc / counted_samples;
}

double dynamic_degree(const std::vector<SampleArchive::Item>& samples) {
  if (samples.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& item : samples) {
    const auto t = item.frames.rows();
    if (t < 2) continue;
    double s = 0.0;
    for (Eigen::Index f = 0; f + 1 < t; ++f) s += (item.frames.row(f + 1) - item.frames.row(f)).norm();
    acc += s / static_cast<double>(t - 1);
  }
  return acc / static_cast<double>(samples.size());
}

double mode_commitment(const Mat& samples, const GaussianMixture& gmm) {
  if (samples.rows() == 0) throw InputError("mode_commitment: no samples");
  if (samples.cols() != gmm.dim()) throw InputError("mode_commitment: dimension mismatch");

  // Separation precondition: metric undefined for overlapping modes.
  double sigma_max = std::sqrt(gmm.variances.maxCoeff());
  double min_dist = std::numeric_limits<double>::infinity();
  for (int i = 0; i < gmm.n_components(); ++i)
    for (int j = i + 1; j < gmm.n_components(); ++j)
      min_dist = std::min(min_dist, (gmm.means.row(i) - gmm.means.row(j)).norm());
  if (gmm.n_components() > 1 && min_dist < 6.0 * sigma_max)
    throw InputError("mode_commitment: modes closer than 6 sigma, metric undefined");

  int within = 0;
  for (Eigen::Index r = 0; r < samples.rows(); ++r) {
    double best = std::numeric_limits<double>::infinity();
    int best_c = 0;
    for (int c = 0; c < gmm.n_components(); ++c) {
      const double d = (samples.row(r) - gmm.means.row(c)).norm();
      if (d < best) {
        best = d;
        best_c = c;
      }
    }
    const double sigma_c = std::sqrt(gmm.variances.row(best_c).maxCoeff());
    if (best <= 3.0 * sigma_c) ++within;
  }
  return static_cast<double>(within) / static_cast<double>(samples.rows());
}

nlohmann::json EvalReport::to_json() const {
  return {{"local_fidelity", local_fidelity},
          {"global_consistency", global_consistency},
          {"dynamic_degree", dynamic_degree},
          {"mode_commitment", mode_commitment},
          {"nfe_used", nfe_used},
          {"n_samples", n_samples},
          {"head", head},
          {"checkpoint_hash", checkpoint_hash},
          {"gaps", gaps}};
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
  EvalReport r;
  r.local_fidelity = j.value("local_fidelity", 0.0);
  r.global_consistency = j.value("global_consistency", 0.0);
  r.dynamic_degree = j.value("dynamic_degree", 0.0);
  r.mode_commitment = j.value("mode_commitment", 0.0);
  r.nfe_used = j.value("nfe_used", 0);
  r.n_samples = j.value("n_samples", 0);
  r.head = j.value("head", "");
  r.checkpoint_hash = j.value("checkpoint_hash", "");
  r.gaps = j.value("gaps", std::vector<std::string>{});
  return r;
}

EvalReport evaluate_archive(const SampleArchive& archive,
                            const std::vector<CorpusRecord>& reference,
                            const RegimeGrammar& grammar, const EvalConfig& cfg) {
  EvalReport rep;
  rep.nfe_used = archive.nfe;
  rep.n_samples = static_cast<int>(archive.items.size());
  rep.head = archive.head;
  rep.checkpoint_hash = archive.checkpoint_hash;

  std::vector<SampleArchive::Item> ref_items;
  for (const auto& rec : reference) {
    SampleArchive::Item item;
    item.frames = decode(rec.seq);
    item.script = rec.seq.condition.script;
    ref_items.push_back(std::move(item));
  }

  rep.local_fidelity = local_fidelity(archive.items, ref_items, grammar, cfg);
  const bool have_scripts =
      std::any_of(archive.items.begin(), archive.items.end(),
                  [](const SampleArchive::Item& it) { return !it.script.empty(); });
  if (have_scripts) {
    rep.global_consistency = global_consistency(archive.items, grammar, cfg);
  } else {
    rep.gaps.push_back("global_consistency omitted: archive carries no scripts");
  }
  rep.dynamic_degree = dynamic_degree(archive.items);

  Mat frames_pool;
  std::size_t total_frames = 0;
  for (const auto& it : archive.items) total_frames += static_cast<std::size_t>(it.frames.rows());
  frames_pool.resize(static_cast<Eigen::Index>(total_frames), archive.items[0].frames.cols());
  Eigen::Index row = 0;
  for (const auto& it : archive.items) {
    frames_pool.middleRows(row, it.frames.rows()) = it.frames;
    row += it.frames.rows();
  }
  rep.mode_commitment = mode_commitment(frames_pool, grammar.pooled_frame_mixture());
  return rep;
}

std::vector<ReportRow> make_report(std::vector<ReportRow> rows) {
  if (rows.empty()) return rows;
  double lf_min = std::numeric_limits<double>::infinity(), lf_max = -lf_min;
  double gc_min = lf_min, gc_max = -lf_min;
  for (const auto& r : rows) {
    lf_min = std::min(lf_min, r.report.local_fidelity);
    lf_max = std::max(lf_max, r.report.local_fidelity);
    gc_min = std::min(gc_min, r.report.global_consistency);
    gc_max = std::max(gc_max, r.report.global_consistency);
  }
  auto norm = [](double v, double lo, double hi) {
    return hi > lo ? (v - lo) / (hi - lo) : 0.5;
  };
  for (auto& r : rows) {
    const double lf_score = 1.0 - norm(r.report.local_fidelity, lf_min, lf_max);  // lower is better
    const double gc_score = norm(r.report.global_consistency, gc_min, gc_max);
    r.combined_score = 0.5 * (lf_score + gc_score);
  }
  std::stable_sort(rows.begin(), rows.end(), [](const ReportRow& a, const ReportRow& b) {
    return a.combined_score > b.combined_score;
  });
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i].rank = static_cast<int>(i) + 1;
  return rows;
}

std::string report_csv(const std::vector<ReportRow>& rows) {
  std::ostringstream os;
  os << "rank,name,nfe,local_fidelity,global_consistency,dynamic_degree,mode_commitment,"
        "combined_score,n_samples,head\n";
  os.precision(10);
  for (const auto& r : rows) {
    os << r.rank << ',' << r.name << ',' << r.report.nfe_used << ',' << r.report.local_fidelity
       << ',' << r.report.global_consistency << ',' << r.report.dynamic_degree << ','
       << r.report.mode_commitment << ',' << r.combined_score << ',' << r.report.n_samples << ','
       << r.report.head << '\n';
  }
  return os.str();
}

std::string report_text(const std::vector<ReportRow>& rows) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof(line), "%-4s %-28s %4s %12s %12s %10s %10s %9s\n", "rank", "run",
                "NFE", "local_fid", "global_con", "dyn_deg", "mode_com", "combined");
  os << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line), "%-4d %-28s %4d %12.5f %12.5f %10.4f %10.4f %9.4f\n", r.rank,
                  r.name.c_str(), r.report.nfe_used, r.report.local_fidelity,
                  r.report.global_consistency, r.report.dynamic_degree, r.report.mode_commitment,
                  r.combined_score);
    os << line;
  }
  return os.str();
}

}  // namespace flowlab
