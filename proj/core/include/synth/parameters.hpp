#pragma once

#include <string>
#include <vector>

#include "synth/tensor.hpp"

namespace synth {

struct NamedParam {
  std::string name;
  Tensor tensor;
  bool trainable = true;
};

/// Ordered name -> tensor table. Each storage is registered at most once, so
/// a tensor shared between layers appears under its first name only.
class ParamRegistry {
 public:
  // Returns false when the storage is already registered. Throws ConfigError
  // on a name collision between distinct tensors.
  bool add(std::string name, Tensor tensor, bool trainable);

  const std::vector<NamedParam>& entries() const { return entries_; }
  std::vector<NamedParam>& entries() { return entries_; }
  const NamedParam* find(const std::string& name) const;
  std::size_t scalar_count() const;
  std::size_t size() const { return entries_.size(); }
  void zero_grad();

 private:
  std::vector<NamedParam> entries_;
};

}  // namespace synth
