#include "flowlab/windows.hpp"

#include "flowlab/errors.hpp"
#include "flowlab/flow.hpp"

namespace flowlab {

std::vector<WindowSpec> enumerate_windows(int t_long, int length, int stride) {
  if (length < 2) throw InputError("enumerate_windows: window length must be >= 2");
  if (length > t_long) throw InputError("enumerate_windows: window longer than sequence");
  if (stride < 1 || stride > length) throw InputError("enumerate_windows: need 1 <= stride <= L");
  std::vector<WindowSpec> out;
  int start = 0;
  while (start + length <= t_long) {
    out.push_back({start, length, stride});
    start += stride;
  }
  if (out.back().start != t_long - length) out.push_back({t_long - length, length, stride});
  return out;
}

Mat crop(const Mat& seq, const WindowSpec& w) {
  if (w.start < 0 || w.length < 1 || w.start + w.length > seq.rows())
    throw InputError("crop: window [" + std::to_string(w.start) + ", " +
                     std::to_string(w.start + w.length) + ") out of range for T=" +
                     std::to_string(seq.rows()));
  return seq.middleRows(w.start, w.length);
}

bool crop_noise_commutes(const Mat& x0_long, const Mat& z_long, double t, const WindowSpec& w) {
  const Mat lhs = crop(interpolate(x0_long, z_long, t), w);
  const Mat rhs = interpolate(crop(x0_long, w), crop(z_long, w), t);
  return lhs == rhs;  // Eq. holds bit-exactly: the path is elementwise
}

FixedWindow boundary_fix(const LatentSequence& seq, const WindowSpec& w) {
  if (seq.kinds.empty() || seq.kinds[0] != LatentKind::kAbsolute)
    throw InputError("boundary_fix: malformed sequence, first latent must be absolute");
  if (w.start < 0 || w.start + w.length > seq.length())
    throw InputError("boundary_fix: window out of range");

  FixedWindow out;
  out.start = w.start;
  if (w.start == 0) {
    out.latents = crop(seq.latents, w);
    out.kinds.assign(seq.kinds.begin(), seq.kinds.begin() + w.length);
    out.loss_mask.assign(static_cast<std::size_t>(w.length), true);
    return out;
  }

  // Decode the prefix [0, k) and re-encode its last frame as an absolute
  // latent in front of the cropped deltas.
  LatentSequence prefix;
  prefix.latents = seq.latents.topRows(w.start);
  prefix.kinds.assign(seq.kinds.begin(), seq.kinds.begin() + w.start);
  const Mat prefix_frames = decode(prefix);

  out.latents.resize(w.length + 1, seq.latents.cols());
  out.latents.row(0) = prefix_frames.row(w.start - 1);
  out.latents.bottomRows(w.length) = seq.latents.middleRows(w.start, w.length);
  out.kinds.assign(static_cast<std::size_t>(w.length + 1), LatentKind::kDelta);
  out.kinds[0] = LatentKind::kAbsolute;
  out.loss_mask.assign(static_cast<std::size_t>(w.length + 1), true);
  out.loss_mask[0] = false;
  return out;
}

}  // namespace flowlab
