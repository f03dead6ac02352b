#include "e2stn/synthetic.hpp"

#include <cmath>

#include "e2stn/error.hpp"
#include "e2stn/protocol.hpp"
#include "e2stn/random.hpp"

namespace e2stn {

void SyntheticSpec::validate() const {
  if (channels < 1 || bands < 1) throw ConfigError("synthetic: channels and bands must be >= 1");
  if (classes < 2) throw ConfigError("synthetic: need at least 2 classes");
  if (subjects_per_domain < 1 || trials_per_class < 1) throw ConfigError("synthetic: empty domain");
  if (!(gain_min > 0.0) || gain_max < gain_min) throw ConfigError("synthetic: gains must satisfy 0 < gain_min <= gain_max");
  if (offset_max < offset_min) throw ConfigError("synthetic: offset_max < offset_min");
  if (!(band_coherence >= 0.0 && band_coherence <= 1.0)) throw ConfigError("synthetic: band_coherence must be in [0, 1]");
  if (pattern_scale < 0.0 || baseline_scale < 0.0 || noise_sigma < 0.0 || subject_jitter < 0.0 || class_margin < 0.0) {
    throw ConfigError("synthetic: scales must be >= 0");
  }
}

namespace {

double frobenius_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

Dataset make_domain(const SyntheticSpec& spec, const std::string& name, const std::vector<std::vector<double>>& means,
                    const std::vector<double>& gains, const std::vector<double>& offsets, Domain domain,
                    std::uint32_t first_subject, Rng rng) {
  const std::size_t cb = spec.channels * spec.bands;
  Dataset d;
  d.manifest.name = name;
  for (std::size_t c = 0; c < spec.channels; ++c) d.manifest.channel_names.push_back("ch" + std::to_string(c));
  for (std::size_t b = 0; b < spec.bands; ++b) d.manifest.band_names.push_back("band" + std::to_string(b));
  d.manifest.class_names = canonical_class_names(spec.classes);
  for (std::size_t s = 0; s < spec.subjects_per_domain; ++s) {
    std::vector<double> jitter(cb);
    for (auto& v : jitter) v = rng.normal(0.0, spec.subject_jitter);
    for (std::size_t k = 0; k < spec.classes; ++k) {
      for (std::size_t n = 0; n < spec.trials_per_class; ++n) {
        LabeledTrial t;
        t.subject = first_subject + static_cast<std::uint32_t>(s);
        t.label = static_cast<std::uint16_t>(k);
        t.domain = domain;
        t.features.channels = spec.channels;
        t.features.bands = spec.bands;
        t.features.values.resize(cb);
        for (std::size_t c = 0; c < spec.channels; ++c) {
          for (std::size_t b = 0; b < spec.bands; ++b) {
            const std::size_t i = c * spec.bands + b;
            t.features.values[i] = gains[c] * means[k][i] + offsets[c] + jitter[i] + rng.normal(0.0, spec.noise_sigma);
          }
        }
        d.trials.push_back(std::move(t));
      }
    }
  }
  refresh_manifest(d);
  return d;
}

}  // namespace

SyntheticDomains generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng root(seed);
  Rng pattern_rng = root.split(1);
  const std::size_t cb = spec.channels * spec.bands;

  std::vector<double> baseline(cb);
  Rng baseline_rng = root.split(5);
  for (auto& v : baseline) v = baseline_rng.normal(0.0, spec.baseline_scale);

  std::vector<std::vector<double>> means;
  constexpr int kMaxAttempts = 10000;
  for (std::size_t k = 0; k < spec.classes; ++k) {
    for (int attempt = 0;; ++attempt) {
      if (attempt == kMaxAttempts) throw ConfigError("synthetic: class_margin unreachable with this pattern_scale");
      std::vector<double> m(cb);
      const double shared = std::sqrt(spec.band_coherence);
      const double own = std::sqrt(1.0 - spec.band_coherence);
      for (std::size_t c = 0; c < spec.channels; ++c) {
        const double level = pattern_rng.normal();
        for (std::size_t b = 0; b < spec.bands; ++b) {
          m[c * spec.bands + b] = spec.pattern_scale * (shared * level + own * pattern_rng.normal());
        }
      }
      bool ok = true;
      for (const auto& other : means) ok = ok && frobenius_distance(m, other) >= spec.class_margin;
      if (ok) {
        for (std::size_t i = 0; i < cb; ++i) m[i] += baseline[i];
        means.push_back(std::move(m));
        break;
      }
    }
  }

  Rng style_rng = root.split(2);
  SyntheticDomains out;
  out.gains.resize(spec.channels);
  out.offsets.resize(spec.channels);
  for (std::size_t c = 0; c < spec.channels; ++c) {
    out.gains[c] = style_rng.uniform(spec.gain_min, spec.gain_max);
    out.offsets[c] = style_rng.uniform(spec.offset_min, spec.offset_max);
  }
  const std::vector<double> unit(spec.channels, 1.0);
  const std::vector<double> zero(spec.channels, 0.0);
  out.source = make_domain(spec, "synthetic-source", means, unit, zero, Domain::Source, 0, root.split(3));
  out.target = make_domain(spec, "synthetic-target", means, out.gains, out.offsets, Domain::Target,
                           static_cast<std::uint32_t>(spec.subjects_per_domain), root.split(4));
  return out;
}

}  // namespace e2stn
