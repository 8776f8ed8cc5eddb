#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "demo/errors.hpp"

namespace demo {

/// One named trainable array with its gradient accumulator and the
/// first/second-moment buffers used by the decoupled-weight-decay optimizer.
struct Param {
  std::string name;
  std::vector<int> shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until a backward pass accumulates
  std::vector<double> moment1;
  std::vector<double> moment2;

  std::size_t size() const { return value.size(); }
  void accumulate_grad(const std::vector<double>& g);
};

/// Insertion-ordered collection of parameters with unique names.
class ParamStore {
 public:
  Param& create(const std::string& name, std::vector<int> shape,
                std::vector<double> init);
  Param* find(const std::string& name);
  const Param* find(const std::string& name) const;
  Param& at(const std::string& name);

  std::size_t count() const { return params_.size(); }
  std::size_t scalar_count() const;

  /// Stable iteration in creation order.
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grads();

  /// Flat binary checkpoint: magic "DEMOCKPT", u32 version, u64 count, then
  /// per parameter u32 name length, name bytes, u32 rank, u64 dims, raw
  /// little-endian f64 values.
  void save(const std::string& path) const;
  /// Loads values into the existing parameters; names, ranks and dims must
  /// match exactly (CheckpointMismatch otherwise).
  void load(const std::string& path);

 private:
  std::vector<std::unique_ptr<Param>> params_;
  std::map<std::string, Param*> by_name_;
};

}  // namespace demo
