#include "flowlab/sampling.hpp"

#include "flowlab/errors.hpp"

namespace flowlab {

SampleArchive generate_archive(const DdtModel& model, const std::vector<CorpusRecord>& script_source,
                               int n_regimes, const SampleOptions& opt) {
  if (script_source.empty()) throw InputError("generate_archive: no scripts to condition on");
  if (opt.nfe < 1) throw InputError("generate_archive: nfe >= 1 required");

  SampleArchive archive;
  archive.nfe = opt.nfe;
  archive.head = opt.head == HeadKind::kDm ? "dm" : "fm";
  archive.items.resize(static_cast<std::size_t>(opt.n));

#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < opt.n; ++i) {
    const CorpusRecord& rec = script_source[static_cast<std::size_t>(i) % script_source.size()];
    const int t_long = rec.seq.length();
    const Mat cond = rec.seq.condition.per_frame(t_long, n_regimes);
    const std::uint64_t item_seed = mix_seed(opt.seed, static_cast<std::uint64_t>(i));

    Mat latents;
    if (opt.head == HeadKind::kDm) {
      RolloutResult rr = student_rollout(model, cond, opt.nfe, item_seed, opt.schedule);
      latents = std::move(rr.x0);
    } else {
      Rng rng(item_seed);
      const Mat z = rng.normal_matrix(t_long, model.config().data_dim);
      ModelValueField field(model, HeadKind::kFm);
      latents = euler_sample(field, z, opt.nfe, cond);
    }

    LatentSequence seq;
    seq.latents = std::move(latents);
    seq.kinds.assign(static_cast<std::size_t>(t_long), LatentKind::kDelta);
    seq.kinds[0] = LatentKind::kAbsolute;

    SampleArchive::Item item;
    item.frames = decode(seq);
    item.script = rec.seq.condition.script;
    item.seed = item_seed;
    archive.items[static_cast<std::size_t>(i)] = std::move(item);
  }
  return archive;
}

}  // namespace flowlab
