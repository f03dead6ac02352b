#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "e2stn/error.hpp"
#include "e2stn/protocol.hpp"
#include "e2stn/random.hpp"
#include "e2stn/synthetic.hpp"

using namespace e2stn;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << bytes;
}

Dataset random_dataset(std::size_t n, Rng& rng) {
  Dataset d;
  d.manifest.name = "random";
  d.manifest.channel_names = {"a", "b", "c"};
  d.manifest.band_names = {"delta", "theta"};
  d.manifest.class_names = {"neutral", "sad", "happy"};
  for (std::size_t i = 0; i < n; ++i) {
    LabeledTrial t;
    t.subject = static_cast<std::uint32_t>(rng.below(4) + 10);
    t.label = static_cast<std::uint16_t>(rng.below(3));
    t.features = {3, 2, {}};
    for (int k = 0; k < 6; ++k) t.features.values.push_back(rng.normal() * 1e3);
    d.trials.push_back(t);
  }
  refresh_manifest(d);
  return d;
}

// Ridge least-squares one-vs-all probe with a bias column; weights solved
// from the normal equations by Gaussian elimination.
class LinearProbe {
 public:
  LinearProbe(const std::vector<const LabeledTrial*>& train, std::size_t classes) : classes_(classes) {
    const std::size_t d = train.front()->features.values.size() + 1;
    std::vector<std::vector<double>> a(d, std::vector<double>(d + classes, 0.0));
    for (const auto* t : train) {
      const auto x = row(*t);
      for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < d; ++j) a[i][j] += x[i] * x[j];
        a[i][d + t->label] += x[i];
      }
    }
    for (std::size_t i = 0; i < d; ++i) a[i][i] += 1e-3;
    for (std::size_t c = 0; c < d; ++c) {
      std::size_t piv = c;
      for (std::size_t r = c + 1; r < d; ++r)
        if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
      std::swap(a[c], a[piv]);
      for (std::size_t r = 0; r < d; ++r) {
        if (r == c) continue;
        const double f = a[r][c] / a[c][c];
        for (std::size_t k = c; k < d + classes; ++k) a[r][k] -= f * a[c][k];
      }
    }
    w_.assign(d, std::vector<double>(classes));
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t k = 0; k < classes; ++k) w_[i][k] = a[i][d + k] / a[i][i];
  }

  double accuracy(const std::vector<const LabeledTrial*>& test) const {
    std::size_t ok = 0;
    for (const auto* t : test) {
      const auto x = row(*t);
      std::size_t best = 0;
      double best_score = -INFINITY;
      for (std::size_t k = 0; k < classes_; ++k) {
        double s = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * w_[i][k];
        if (s > best_score) best_score = s, best = k;
      }
      ok += best == t->label;
    }
    return static_cast<double>(ok) / static_cast<double>(test.size());
  }

 private:
  static std::vector<double> row(const LabeledTrial& t) {
    std::vector<double> x(t.features.values);
    x.push_back(1.0);
    return x;
  }
  std::size_t classes_;
  std::vector<std::vector<double>> w_;
};

}  // namespace

TEST_CASE("trial file round trip") {
  TempDir dir("e2stn_test_roundtrip");
  Rng rng(61);
  const Dataset d = random_dataset(37, rng);
  const auto manifest = write_dataset(d, dir.path, "set");
  const Dataset back = load_dataset(manifest);
  REQUIRE(back.trials.size() == d.trials.size());
  for (std::size_t i = 0; i < d.trials.size(); ++i) {
    CHECK(back.trials[i].subject == d.trials[i].subject);
    CHECK(back.trials[i].label == d.trials[i].label);
    CHECK(back.trials[i].features.values == d.trials[i].features.values);
  }
  CHECK(back.manifest.channel_names == d.manifest.channel_names);
  CHECK(back.manifest.subject_ids == d.manifest.subject_ids);
  CHECK(back.manifest.trial_index == d.manifest.trial_index);
  const std::string bytes = slurp(dir.path / "set.eegf");
  CHECK(bytes.size() == kTrialHeaderBytes + 37 * (4 + 2 + 8 * 6));
  CHECK(bytes.substr(0, 4) == "EEGF");

  DatasetReader reader(manifest);
  CHECK(reader.read(5).features.values == d.trials[5].features.values);
  CHECK_THROWS_AS(reader.read(37), FormatError);

  write_dataset(back, dir.path, "again");
  CHECK(slurp(dir.path / "again.eegf") == bytes);
}

TEST_CASE("trial file corruption") {
  TempDir dir("e2stn_test_corrupt");
  Rng rng(62);
  const auto manifest = write_dataset(random_dataset(8, rng), dir.path, "set");
  const fs::path data = dir.path / "set.eegf";
  const std::string good = slurp(data);

  SUBCASE("bad magic names the file") {
    std::string bad = good;
    bad[0] = 'X';
    spit(data, bad);
    try {
      load_dataset(manifest);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find("set.eegf") != std::string::npos);
    }
  }
  SUBCASE("truncated file") {
    spit(data, good.substr(0, good.size() - 5));
    CHECK_THROWS_AS(load_dataset(manifest), FormatError);
  }
  SUBCASE("manifest count disagrees with the data file") {
    std::string text = slurp(manifest);
    const auto pos = text.find("\"trial_count\": 8");
    REQUIRE(pos != std::string::npos);
    text.replace(pos, 16, "\"trial_count\": 9");
    spit(manifest, text);
    CHECK_THROWS_AS(load_dataset(manifest), FormatError);
  }
  SUBCASE("unknown label reports the trial index") {
    std::string bad = good;
    bad[kTrialHeaderBytes + 2 * (4 + 2 + 48) + 4] = 7;
    spit(data, bad);
    try {
      load_dataset(manifest);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find("trial 2") != std::string::npos);
    }
  }
  SUBCASE("missing files") {
    CHECK_THROWS_AS(load_dataset(dir.path / "nope.json"), IoError);
    fs::remove(data);
    CHECK_THROWS_AS(load_dataset(manifest), IoError);
  }
}

TEST_CASE("CSV import") {
  TempDir dir("e2stn_test_csv");
  spit(dir.path / "in.csv", "subject,label,c0b0,c0b1,c1b0,c1b1\n1,0,0.5,1,2,3\n2,1,4,5,6,7.25\n");
  const Dataset d = import_csv(dir.path / "in.csv", "csv", {"neutral", "sad"});
  CHECK(d.trials.size() == 2);
  CHECK(d.manifest.channels() == 2);
  CHECK(d.manifest.bands() == 2);
  CHECK(d.trials[1].features.at(1, 1) == 7.25);
  CHECK(import_csv(dir.path / "in.csv", "csv").manifest.class_names == std::vector<std::string>{"class0", "class1"});
  spit(dir.path / "bad.csv", "subject,label,c0b1,c0b0\n1,0,1,2\n");
  CHECK_THROWS_AS(import_csv(dir.path / "bad.csv", "bad"), FormatError);
  spit(dir.path / "short.csv", "subject,label,c0b0\n1,0\n");
  CHECK_THROWS_AS(import_csv(dir.path / "short.csv", "short"), FormatError);

  spit(dir.path / "named.csv", "subject,label,c0b0\n1,positive,1\n1,negative,2\n2,neutral,3\n2,positive,4\n");
  const Dataset named = import_csv(dir.path / "named.csv", "named");
  CHECK(named.manifest.class_names == std::vector<std::string>{"negative", "neutral", "positive"});
  CHECK(named.trials[0].label == 2);
  CHECK(named.trials[1].label == 0);
  CHECK(named.trials[2].label == 1);
  const Dataset given = import_csv(dir.path / "named.csv", "named", {"positive", "neutral", "negative"});
  CHECK(given.trials[0].label == 0);
  CHECK(given.trials[1].label == 2);
  CHECK_THROWS_AS(import_csv(dir.path / "named.csv", "named", {"positive", "neutral"}), FormatError);
  spit(dir.path / "mixed.csv", "subject,label,c0b0\n1,0,1\n1,sad,2\n");
  CHECK_THROWS_AS(import_csv(dir.path / "mixed.csv", "mixed"), FormatError);
  spit(dir.path / "signed.csv", "subject,label,c0b0\n1,-1,1\n");
  CHECK_THROWS_AS(import_csv(dir.path / "signed.csv", "signed", {"a", "b"}), FormatError);
}

TEST_CASE("synthetic generator") {
  const SyntheticSpec spec;
  SUBCASE("seed determinism and byte-identical files") {
    TempDir dir("e2stn_test_synth");
    const auto a = generate_synthetic(spec, 7), b = generate_synthetic(spec, 7);
    write_dataset(a.target, dir.path / "a", "t");
    write_dataset(b.target, dir.path / "b", "t");
    CHECK(slurp(dir.path / "a" / "t.eegf") == slurp(dir.path / "b" / "t.eegf"));
    CHECK(slurp(dir.path / "a" / "t.json") == slurp(dir.path / "b" / "t.json"));
    CHECK(generate_synthetic(spec, 8).target.trials[0].features.values != a.target.trials[0].features.values);
  }
  SUBCASE("shapes, counts, finiteness and positive gains") {
    const auto d = generate_synthetic(spec, 1);
    CHECK(d.source.trials.size() == 5 * 3 * 60);
    CHECK(d.target.manifest.subject_ids.size() == 5);
    for (const auto& t : d.target.trials) {
      REQUIRE(t.features.values.size() == 16 * 5);
      for (double v : t.features.values) REQUIRE(std::isfinite(v));
    }
    for (double g : d.gains) CHECK(g > 0.0);
  }
  SUBCASE("null shift makes the domains identical") {
    SyntheticSpec s = spec;
    s.gain_min = s.gain_max = 1.0;
    s.offset_min = s.offset_max = 0.0;
    s.noise_sigma = 0.0;
    s.subject_jitter = 0.0;
    const auto d = generate_synthetic(s, 3);
    for (std::size_t i = 0; i < d.source.trials.size(); ++i)
      CHECK(d.source.trials[i].features.values == d.target.trials[i].features.values);
  }
  SUBCASE("class means respect the margin") {
    SyntheticSpec s = spec;
    s.noise_sigma = 0.0;
    s.subject_jitter = 0.0;
    const auto d = generate_synthetic(s, 4);
    std::vector<std::vector<double>> means(3);
    for (const auto& t : d.source.trials) means[t.label] = t.features.values;
    for (std::size_t a = 0; a < 3; ++a)
      for (std::size_t b = a + 1; b < 3; ++b) {
        double s2 = 0.0;
        for (std::size_t i = 0; i < means[a].size(); ++i) s2 += std::pow(means[a][i] - means[b][i], 2);
        CHECK(std::sqrt(s2) >= spec.class_margin);
      }
  }
  SUBCASE("invalid specs") {
    SyntheticSpec s = spec;
    s.gain_min = 0.0;
    CHECK_THROWS_AS(generate_synthetic(s, 1), ConfigError);
    s = spec;
    s.band_coherence = 1.5;
    CHECK_THROWS_AS(generate_synthetic(s, 1), ConfigError);
  }
}

TEST_CASE("linear probe loses at least 15 points across domains") {
  const SyntheticSpec spec;
  double in_domain = 0.0, cross = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto d = generate_synthetic(spec, seed);
    // In-domain: hold out the last source subject.
    const std::uint32_t held = d.source.manifest.subject_ids.back();
    std::vector<const LabeledTrial*> train, held_out, target;
    for (const auto& t : d.source.trials) (t.subject == held ? held_out : train).push_back(&t);
    for (const auto& t : d.target.trials) target.push_back(&t);
    const LinearProbe probe(train, spec.classes);
    in_domain += probe.accuracy(held_out) / 5.0;
    cross += probe.accuracy(target) / 5.0;
  }
  MESSAGE("linear probe: in-domain " << in_domain << ", cross-domain " << cross);
  CHECK(in_domain - cross >= 0.15);
  // The target keeps its class structure: a probe trained in-domain on the
  // target separates it well.
  const auto d = generate_synthetic(spec, 1);
  std::vector<const LabeledTrial*> tt, th;
  const std::uint32_t held = d.target.manifest.subject_ids.back();
  for (const auto& t : d.target.trials) (t.subject == held ? th : tt).push_back(&t);
  CHECK(LinearProbe(tt, spec.classes).accuracy(th) > 0.8);
}

TEST_CASE("protocol") {
  const auto d = generate_synthetic(SyntheticSpec{}, 2);
  SUBCASE("one fold per target subject sharing one source set") {
    const auto folds = build_protocol(ProtocolSpec::three_class(), d.source, d.target);
    REQUIRE(folds.size() == 5);
    std::set<std::uint32_t> subjects;
    for (const auto& f : folds) {
      subjects.insert(f.target_subject);
      CHECK(f.source_train == folds[0].source_train);
      CHECK(f.target_pool.size() == f.target_test.size());
      for (const auto& t : f.target_test) CHECK(t.subject == f.target_subject);
    }
    CHECK(subjects.size() == 5);
    CHECK(folds[0].source_train->size() == d.source.trials.size());
  }
  SUBCASE("single target subject") {
    ProtocolSpec spec = ProtocolSpec::three_class();
    spec.target_subject = d.target.manifest.subject_ids[2];
    const auto folds = build_protocol(spec, d.source, d.target);
    REQUIRE(folds.size() == 1);
    CHECK(folds[0].target_subject == spec.target_subject.value());
    spec.target_subject = 999;
    CHECK_THROWS_AS(build_protocol(spec, d.source, d.target), ProtocolError);
  }
  SUBCASE("class filtering and alignment") {
    Dataset src = d.source;
    src.manifest.class_names = {"Neutral", "Sadness", "Joy"};
    ProtocolSpec two{{"neutral", "happy"}, std::nullopt};
    const auto folds = build_protocol(two, src, d.target);
    for (const auto& t : *folds[0].source_train) CHECK(t.label < 2);
    std::size_t happy = 0;
    for (const auto& t : *folds[0].source_train) happy += t.label == 1;
    CHECK(happy == 5 * 60);
    CHECK(folds[0].class_names == std::vector<std::string>{"neutral", "happy"});
    CHECK_THROWS_AS(build_protocol(ProtocolSpec::four_class(), d.source, d.target), ProtocolError);
  }
  CHECK(canonical_emotion("JOY") == "happy");
  CHECK(canonical_class_names(4) == std::vector<std::string>{"neutral", "sad", "happy", "fear"});
}
