#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "masdt/optim.hpp"
#include "masdt/tensor.hpp"

namespace masdt {

// On disk: magic "MSDT", u16 version, u32 header length, JSON header with the
// parameter manifest (name, shape, byte offset), then little-endian float64
// blobs. Save of a loaded checkpoint is byte-identical.
struct Checkpoint {
  std::uint16_t version = 1;
  std::string kind;
  std::string config_fingerprint;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  std::vector<std::pair<std::string, Tensor>> tensors;
  bool has_opt_state = false;
  std::vector<AdamWState> opt_state;  // parallel to tensors when present

  const Tensor* find(const std::string& name) const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// strict: refuse a fingerprint mismatch, reporting both sides.
void check_fingerprint(const Checkpoint& ckpt, const std::string& expected, bool strict);

// Copies checkpoint values into same-named parameters. Shape mismatch throws;
// returns the names that were loaded.
std::vector<std::string> load_matching(const Checkpoint& ckpt, std::vector<Parameter>& params);

Checkpoint make_checkpoint(const std::string& kind, const std::string& fingerprint,
                           std::uint64_t seed, const std::vector<Parameter>& params,
                           const AdamW* opt);

}  // namespace masdt
