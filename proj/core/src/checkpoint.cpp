#include "masdt/checkpoint.hpp"

#include <json.hpp>
#include <set>
#include <stdexcept>

#include "masdt/utils.hpp"

namespace masdt {

namespace {
constexpr char kMagic[4] = {'M', 'S', 'D', 'T'};
using json = nlohmann::json;
}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  json manifest = json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : ckpt.tensors) {
    json entry;
    entry["name"] = name;
    entry["shape"] = t.shape();
    entry["offset"] = offset;
    manifest.push_back(entry);
    offset += t.numel() * 8;
  }
  json opt;
  opt["present"] = ckpt.has_opt_state;
  if (ckpt.has_opt_state) {
    if (ckpt.opt_state.size() != ckpt.tensors.size()) {
      throw std::invalid_argument("checkpoint: optimizer state count does not match tensor count");
    }
    json states = json::array();
    for (std::size_t i = 0; i < ckpt.opt_state.size(); ++i) {
      const auto& st = ckpt.opt_state[i];
      const std::size_t n = ckpt.tensors[i].second.numel();
      if (!st.m.empty() && (st.m.size() != n || st.v.size() != n)) {
        throw std::invalid_argument("checkpoint: optimizer state size mismatch at " + ckpt.tensors[i].first);
      }
      json entry;
      entry["empty"] = st.m.empty();
      entry["step"] = st.step;
      entry["offset"] = offset;
      states.push_back(entry);
      if (!st.m.empty()) offset += 2 * n * 8;
    }
    opt["states"] = states;
  }

  json header;
  header["fingerprint"] = ckpt.config_fingerprint;
  header["kind"] = ckpt.kind;
  header["manifest"] = manifest;
  header["opt"] = opt;
  header["seed"] = ckpt.seed;
  header["step"] = ckpt.step;
  header["version"] = ckpt.version;
  const std::string header_str = header.dump();
  if (header_str.size() > 0xffffffffULL) throw std::runtime_error("checkpoint: header too large");

  std::string out;
  out.reserve(10 + header_str.size() + offset);
  out.append(kMagic, 4);
  put_u16(out, ckpt.version);
  put_u32(out, static_cast<std::uint32_t>(header_str.size()));
  out += header_str;
  for (const auto& [name, t] : ckpt.tensors) {
    (void)name;
    for (double v : t.values()) put_f64(out, v);
  }
  if (ckpt.has_opt_state) {
    for (const auto& st : ckpt.opt_state) {
      for (double v : st.m) put_f64(out, v);
      for (double v : st.v) put_f64(out, v);
    }
  }
  write_file_atomic(path, out);
}

Checkpoint load_checkpoint(const std::string& path) {
  const std::string buf = read_file(path);
  if (buf.size() < 10 || buf.compare(0, 4, kMagic, 4) != 0) {
    throw std::runtime_error("checkpoint " + path + ": bad magic");
  }
  std::size_t pos = 4;
  const std::uint16_t version = get_u16(buf, pos);
  if (version != 1) throw std::runtime_error("checkpoint " + path + ": unsupported version " + std::to_string(version));
  const std::uint32_t header_len = get_u32(buf, pos);
  if (pos + header_len > buf.size()) throw std::runtime_error("checkpoint " + path + ": truncated header");

  json header;
  try {
    header = json::parse(buf.substr(pos, header_len));
  } catch (const json::exception& e) {
    throw std::runtime_error("checkpoint " + path + ": corrupt header: " + e.what());
  }
  const std::size_t blob_base = pos + header_len;

  Checkpoint ckpt;
  try {
    ckpt.version = version;
    ckpt.kind = header.at("kind").get<std::string>();
    ckpt.config_fingerprint = header.at("fingerprint").get<std::string>();
    ckpt.seed = header.at("seed").get<std::uint64_t>();
    ckpt.step = header.at("step").get<std::uint64_t>();
    for (const auto& entry : header.at("manifest")) {
      const auto name = entry.at("name").get<std::string>();
      const auto shape = entry.at("shape").get<Shape>();
      const auto offset = entry.at("offset").get<std::uint64_t>();
      const std::size_t n = shape_numel(shape);
      std::size_t at = blob_base + offset;
      if (at + n * 8 > buf.size()) throw std::runtime_error("checkpoint " + path + ": blob out of range for " + name);
      std::vector<double> values(n);
      for (std::size_t i = 0; i < n; ++i) values[i] = get_f64(buf, at);
      ckpt.tensors.emplace_back(name, Tensor::from_data(shape, std::move(values)));
    }
    const json& opt = header.at("opt");
    ckpt.has_opt_state = opt.at("present").get<bool>();
    if (ckpt.has_opt_state) {
      const auto& states = opt.at("states");
      if (states.size() != ckpt.tensors.size()) throw std::runtime_error("checkpoint " + path + ": opt state count mismatch");
      for (std::size_t i = 0; i < states.size(); ++i) {
        AdamWState st;
        st.step = states[i].at("step").get<std::size_t>();
        if (!states[i].at("empty").get<bool>()) {
          const std::size_t n = ckpt.tensors[i].second.numel();
          std::size_t at = blob_base + states[i].at("offset").get<std::uint64_t>();
          if (at + 2 * n * 8 > buf.size()) throw std::runtime_error("checkpoint " + path + ": opt blob out of range");
          st.m.resize(n);
          st.v.resize(n);
          for (std::size_t k = 0; k < n; ++k) st.m[k] = get_f64(buf, at);
          for (std::size_t k = 0; k < n; ++k) st.v[k] = get_f64(buf, at);
        }
        ckpt.opt_state.push_back(std::move(st));
      }
    }
  } catch (const json::exception& e) {
    throw std::runtime_error("checkpoint " + path + ": corrupt header: " + e.what());
  }
  return ckpt;
}

void check_fingerprint(const Checkpoint& ckpt, const std::string& expected, bool strict) {
  if (!strict) return;
  if (ckpt.config_fingerprint != expected) {
    throw std::runtime_error("checkpoint fingerprint " + ckpt.config_fingerprint +
                             " does not match current config fingerprint " + expected);
  }
}

std::vector<std::string> load_matching(const Checkpoint& ckpt, std::vector<Parameter>& params) {
  std::vector<std::string> loaded;
  for (auto& p : params) {
    const Tensor* src = ckpt.find(p.name);
    if (!src) continue;
    if (src->shape() != p.tensor.shape()) {
      throw std::runtime_error("checkpoint tensor " + p.name + " has shape " + shape_str(src->shape()) +
                               ", model expects " + shape_str(p.tensor.shape()));
    }
    p.tensor.values_mut() = src->values();
    loaded.push_back(p.name);
  }
  return loaded;
}

Checkpoint make_checkpoint(const std::string& kind, const std::string& fingerprint,
                           std::uint64_t seed, const std::vector<Parameter>& params,
                           const AdamW* opt) {
  Checkpoint ckpt;
  ckpt.kind = kind;
  ckpt.config_fingerprint = fingerprint;
  ckpt.seed = seed;
  for (const auto& p : params) ckpt.tensors.emplace_back(p.name, p.tensor.detach());
  if (opt) {
    ckpt.has_opt_state = true;
    ckpt.opt_state = opt->states();
    ckpt.step = opt->step_count();
  }
  return ckpt;
}

}  // namespace masdt
