#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "protoshape/nn.hpp"
#include "protoshape/tensor.hpp"

namespace ps {

// Binary checkpoint: "PSCK", u32 version, u64 config hash, u32 entry count,
// then per entry {u32 name length, name, u32 rank, i32 dims, f64 data},
// all little-endian. Entries are written in map order so the file is a pure
// function of its contents.
struct Checkpoint {
  uint64_t config_hash = 0;
  std::map<std::string, Tensor> tensors;
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

void pack_params(Checkpoint& ck, const std::string& prefix, const Params& p);
Params unpack_params(const Checkpoint& ck, const std::string& prefix);

void pack_adam(Checkpoint& ck, const std::string& prefix, const Adam& opt);
void unpack_adam(const Checkpoint& ck, const std::string& prefix, Adam& opt);

void pack_scalar(Checkpoint& ck, const std::string& name, double v);
double unpack_scalar(const Checkpoint& ck, const std::string& name);
bool has_entry(const Checkpoint& ck, const std::string& name);

}  // namespace ps
