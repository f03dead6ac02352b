#pragma once

#include <cstdint>
#include <utility>

#include "e2stn/dataset.hpp"

namespace e2stn {

/// Two-domain generator with a controllable style gap. Both domains share
/// class-mean patterns M_k; the target applies a per-channel affine
/// distortion diag(g) M_k + o 1^T before subject jitter and noise.
struct SyntheticSpec {
  std::size_t channels = 16;
  std::size_t bands = 5;
  std::size_t classes = 3;
  std::size_t subjects_per_domain = 5;
  std::size_t trials_per_class = 60;  // per subject

  /// std of a C x B baseline shared by every M_k; gives each channel its
  /// own band profile, as resting-state spectra do.
  double baseline_scale = 1.0;
  double pattern_scale = 0.2;       // std of the class-specific part of M_k
  /// Share of M_k variance that is constant across bands within a channel.
  double band_coherence = 0.5;
  double class_margin = 1.5;        // min pairwise Frobenius distance of M_k
  double noise_sigma = 0.3;         // per-trial iid noise
  double subject_jitter = 0.05;     // std of a per-subject C x B offset

  double gain_min = 0.5;            // g_c ~ U(gain_min, gain_max)
  double gain_max = 2.0;
  double offset_min = -1.0;         // o_c ~ U(offset_min, offset_max)
  double offset_max = 1.0;

  void validate() const;
};

struct SyntheticDomains {
  Dataset source;
  Dataset target;
  std::vector<double> gains;    // g_c
  std::vector<double> offsets;  // o_c
};

SyntheticDomains generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

}  // namespace e2stn
