#include "e2stn/checkpoint.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "binary_io.hpp"
#include "e2stn/error.hpp"
#include "json.hpp"

namespace e2stn {

namespace {

using nlohmann::json;
using detail::read_f64;
using detail::read_le;
using detail::write_f64;
using detail::write_le;

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void write_array(std::ostream& out, const std::string& name, const Shape& shape, std::span<const double> values) {
  write_le(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_le(out, static_cast<std::uint32_t>(shape.size()));
  for (auto d : shape) write_le(out, static_cast<std::uint64_t>(d));
  for (double v : values) write_f64(out, v);
}

struct RawArray {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

}  // namespace

std::string checkpoint_digest(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return hex64(h);
}

std::string encode_checkpoint(const ExperimentConfig& config, const Model& model, const TrainState& state) {
  json meta;
  meta["config"] = json::parse(to_json(config));
  meta["ablation"] = model.ablation;
  meta["epoch"] = state.epoch;
  meta["adam_step"] = state.adam.steps();
  meta["rng_key"] = hex64(state.rng.key());
  meta["rng_counter"] = hex64(state.rng.counter());
  meta["config_hash"] = hex64(config_hash(config));
  const std::string meta_text = meta.dump();

  std::ostringstream out(std::ios::binary);
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  write_le(out, kCheckpointVersion);
  write_le(out, static_cast<std::uint32_t>(meta_text.size()));
  out.write(meta_text.data(), static_cast<std::streamsize>(meta_text.size()));

  const auto& entries = model.store.entries();
  const auto& m = state.adam.first_moments();
  const auto& v = state.adam.second_moments();
  const bool has_moments = m.size() == entries.size();
  std::uint32_t count = static_cast<std::uint32_t>(entries.size());
  if (has_moments) {
    for (std::size_t i = 0; i < entries.size(); ++i) count += m[i].empty() ? 0 : 2;
  }
  write_le(out, count);
  for (const auto& p : entries) write_array(out, p.name, p.tensor.shape(), p.tensor.data());
  if (has_moments) {
    for (std::size_t i = 0; i < entries.size(); ++i) {
      if (m[i].empty()) continue;
      write_array(out, "adam.m." + entries[i].name, entries[i].tensor.shape(), m[i]);
      write_array(out, "adam.v." + entries[i].name, entries[i].tensor.shape(), v[i]);
    }
  }
  return out.str();
}

Checkpoint decode_checkpoint(const std::string& bytes, const std::string& origin) {
  std::istringstream in(bytes, std::ios::binary);
  auto fail = [&](const std::string& what) { return FormatError("checkpoint " + origin + ": " + what); };
  char magic[6];
  if (!in.read(magic, sizeof magic) || !std::equal(magic, magic + 6, kCheckpointMagic)) throw fail("bad magic bytes");
  std::uint16_t version = 0;
  if (!read_le(in, version)) throw fail("truncated header");
  if (version != kCheckpointVersion) throw fail("unsupported version " + std::to_string(version));
  std::uint32_t meta_len = 0;
  if (!read_le(in, meta_len)) throw fail("truncated header");
  std::string meta_text(meta_len, '\0');
  if (!in.read(meta_text.data(), meta_len)) throw fail("truncated metadata");
  json meta;
  try {
    meta = json::parse(meta_text);
  } catch (const json::exception& e) {
    throw fail(std::string("metadata is not JSON: ") + e.what());
  }

  Checkpoint ck;
  try {
    ck.config = experiment_from_json(meta.at("config").dump());
    const bool ablation = meta.at("ablation").get<bool>();
    ck.model = make_model(ck.config.model, ablation, ck.config.train.seed);
    ck.state.adam = Adam(ck.config.train.adam);
    ck.state.epoch = meta.at("epoch").get<std::size_t>();
    ck.state.adam.set_steps(meta.at("adam_step").get<std::size_t>());
    const auto key = std::stoull(meta.at("rng_key").get<std::string>(), nullptr, 16);
    const auto counter = std::stoull(meta.at("rng_counter").get<std::string>(), nullptr, 16);
    ck.state.rng = Rng(key, counter);
    if (meta.at("config_hash").get<std::string>() != hex64(config_hash(ck.config))) throw fail("config hash mismatch");
  } catch (const json::exception& e) {
    throw fail(std::string("bad metadata: ") + e.what());
  }

  std::uint32_t count = 0;
  if (!read_le(in, count)) throw fail("truncated array table");
  std::vector<RawArray> arrays;
  for (std::uint32_t a = 0; a < count; ++a) {
    RawArray r;
    std::uint32_t name_len = 0;
    if (!read_le(in, name_len)) throw fail("truncated array " + std::to_string(a));
    r.name.resize(name_len);
    if (!in.read(r.name.data(), name_len)) throw fail("truncated array name " + std::to_string(a));
    std::uint32_t ndim = 0;
    if (!read_le(in, ndim)) throw fail("truncated shape of '" + r.name + "'");
    for (std::uint32_t d = 0; d < ndim; ++d) {
      std::uint64_t dim = 0;
      if (!read_le(in, dim)) throw fail("truncated shape of '" + r.name + "'");
      r.shape.push_back(static_cast<std::size_t>(dim));
    }
    r.values.resize(numel(r.shape));
    for (double& v : r.values) {
      if (!read_f64(in, v)) throw fail("truncated data of '" + r.name + "'");
    }
    arrays.push_back(std::move(r));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw fail("trailing bytes after array table");

  auto& entries = ck.model.store.entries();
  ck.state.adam.ensure_state(ck.model.store);
  std::size_t matched = 0;
  for (auto& r : arrays) {
    std::string name = r.name;
    int slot = 0;  // 0 value, 1 first moment, 2 second moment
    if (name.rfind("adam.m.", 0) == 0) {
      slot = 1;
      name = name.substr(7);
    } else if (name.rfind("adam.v.", 0) == 0) {
      slot = 2;
      name = name.substr(7);
    }
    std::size_t i = 0;
    while (i < entries.size() && entries[i].name != name) ++i;
    if (i == entries.size()) throw fail("unknown array '" + r.name + "'");
    if (entries[i].tensor.shape() != r.shape) {
      throw fail("shape of '" + r.name + "' is " + to_string(r.shape) + ", model expects " +
                 to_string(entries[i].tensor.shape()));
    }
    if (slot == 0) {
      auto dst = entries[i].tensor.mutable_data();
      std::copy(r.values.begin(), r.values.end(), dst.begin());
      ++matched;
    } else {
      auto& buf = slot == 1 ? ck.state.adam.first_moments()[i] : ck.state.adam.second_moments()[i];
      if (buf.size() != r.values.size()) throw fail("optimizer state for frozen array '" + name + "'");
      buf = std::move(r.values);
    }
  }
  if (matched != entries.size()) throw fail("missing parameter arrays");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const ExperimentConfig& config, const Model& model,
                     const TrainState& state) {
  const std::string bytes = encode_checkpoint(config, model, state);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return decode_checkpoint(buf.str(), path.string());
}

}  // namespace e2stn
