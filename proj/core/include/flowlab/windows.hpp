#pragma once

#include <vector>

#include "flowlab/world.hpp"

namespace flowlab {

struct WindowSpec {
  int start = 0;   // k
  int length = 2;  // L
  int stride = 0;  // informational; enumeration decides placement
};

// Ordered window starts {0, s, 2s, ...}; when the stride does not land the
// final window flush with the end, one extra start clamped to T-L is added so
// every frame is covered.
std::vector<WindowSpec> enumerate_windows(int t_long, int length, int stride);

// Contiguous row slice [k, k+L).
Mat crop(const Mat& seq, const WindowSpec& w);

// Witness that cropping commutes with the linear noising path.
bool crop_noise_commutes(const Mat& x0_long, const Mat& z_long, double t, const WindowSpec& w);

struct FixedWindow {
  Mat latents;                    // (L+1) x D for k > 0, L x D for k = 0
  std::vector<LatentKind> kinds;
  std::vector<bool> loss_mask;    // false at the reconstructed prefix latent
  int start = 0;
};

// Mid-sequence windows start with a delta latent the teacher never saw at
// position 0; decode the prefix, re-encode its last frame as an absolute
// latent, prepend it, and mask it out of the loss. Windows at k = 0 pass
// through unchanged with an all-true mask.
FixedWindow boundary_fix(const LatentSequence& seq, const WindowSpec& w);

}  // namespace flowlab
