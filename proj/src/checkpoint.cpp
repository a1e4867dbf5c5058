#include "attg/checkpoint.hpp"

#include <sstream>

#include "attg/error.hpp"

namespace attg {
namespace {

void write_arrays(ByteWriter& w, const std::vector<ParamInfo>& infos, const ModelParams<float>& params,
                  const std::string& prefix) {
  const auto arrays = parameter_list(params);
  for (std::size_t i = 0; i < arrays.size(); ++i) {
    const auto& m = *arrays[i];
    w.string(prefix + infos[i].name);
    w.u8(static_cast<std::uint8_t>(infos[i].rank));
    if (infos[i].rank == 2) {
      w.u32(static_cast<std::uint32_t>(m.rows()));
      w.u32(static_cast<std::uint32_t>(m.cols()));
    } else {
      w.u32(static_cast<std::uint32_t>(m.size()));
    }
    for (Eigen::Index k = 0; k < m.size(); ++k) w.f32(m.data()[k]);
  }
}

void read_arrays(ByteReader& r, const std::vector<ParamInfo>& infos, ModelParams<float>& params,
                 const std::string& prefix) {
  auto arrays = parameter_list(params);
  for (std::size_t i = 0; i < arrays.size(); ++i) {
    auto& m = *arrays[i];
    const auto name = r.string();
    if (name != prefix + infos[i].name) throw FormatError("unexpected array '" + name + "', expected '" + prefix + infos[i].name + "'");
    const auto rank = r.u8();
    if (rank != infos[i].rank) throw FormatError("rank mismatch for " + name);
    std::uint32_t rows = 1, cols = 0;
    if (rank == 2) {
      rows = r.u32();
      cols = r.u32();
    } else {
      cols = r.u32();
    }
    if (rows != m.rows() || cols != m.cols()) throw FormatError("shape mismatch for " + name);
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = r.f32();
  }
}

}  // namespace

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0) throw FormatError("line " + std::to_string(lineno) + ": expected key=value");
    auto key = line.substr(0, eq);
    if (!kv.emplace(key, line.substr(eq + 1)).second) throw FormatError("duplicate key '" + key + "'");
  }
  return kv;
}

Checkpoint Checkpoint::fresh(const ModelConfig& config) {
  Checkpoint c;
  c.config = config;
  c.params = init_params<float>(config);
  c.first_moment = zeros_like(c.params);
  c.second_moment = zeros_like(c.params);
  return c;
}

Bytes encode_checkpoint(const Checkpoint& c) {
  std::string text = c.config.to_text();
  text += "optimizer_step=" + std::to_string(c.optimizer_step) + "\n";
  for (const auto& [k, v] : c.metadata) {
    if (k.find('=') != std::string::npos || k.find('\n') != std::string::npos || v.find('\n') != std::string::npos)
      throw ValidationError("checkpoint metadata must be single-line key=value");
    text += "meta." + k + "=" + v + "\n";
  }
  const auto infos = parameter_infos(c.config);
  ByteWriter w;
  w.magic("AMCK");
  w.u16(kCheckpointVersion);
  w.string(text);
  w.u32(static_cast<std::uint32_t>(3 * infos.size()));
  write_arrays(w, infos, c.params, "");
  write_arrays(w, infos, c.first_moment, "opt.m.");
  write_arrays(w, infos, c.second_moment, "opt.v.");
  return w.take();
}

Checkpoint decode_checkpoint(const Bytes& bytes) {
  ByteReader r(bytes);
  r.expect_magic("AMCK");
  const auto version = r.u16();
  if (version != kCheckpointVersion) throw FormatError("unsupported AMCK version " + std::to_string(version));
  const auto kv = parse_key_values(r.string());

  std::map<std::string, std::string> model_keys;
  Checkpoint c;
  for (const auto& [k, v] : kv) {
    if (k.rfind("meta.", 0) == 0) {
      c.metadata[k.substr(5)] = v;
    } else if (k == "optimizer_step") {
      try {
        c.optimizer_step = std::stoll(v);
      } catch (const std::exception&) {
        throw FormatError("invalid optimizer_step");
      }
    } else {
      model_keys[k] = v;
    }
  }
  try {
    c.config = ModelConfig::from_map(model_keys);
  } catch (const ValidationError& e) {
    throw FormatError(std::string("checkpoint config: ") + e.what());
  }
  const auto infos = parameter_infos(c.config);
  if (r.u32() != 3 * infos.size()) throw FormatError("array count does not match the config");
  c.params = init_params<float>(c.config);
  c.first_moment = zeros_like(c.params);
  c.second_moment = zeros_like(c.params);
  read_arrays(r, infos, c.params, "");
  read_arrays(r, infos, c.first_moment, "opt.m.");
  read_arrays(r, infos, c.second_moment, "opt.v.");
  r.expect_end();
  return c;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& c) { write_file(path, encode_checkpoint(c)); }

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  try {
    return decode_checkpoint(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace attg
