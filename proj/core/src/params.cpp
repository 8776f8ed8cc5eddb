#include "demo/params.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace demo {

namespace {

constexpr char kMagic[8] = {'D', 'E', 'M', 'O', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

}  // namespace

void Param::accumulate_grad(const std::vector<double>& g) {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
}

Param& ParamStore::create(const std::string& name, std::vector<int> shape,
                          std::vector<double> init) {
  if (by_name_.count(name))
    throw UsageError("duplicate parameter name '" + name + "'");
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  if (n != init.size())
    throw ShapeMismatch("parameter '" + name + "' init size");
  auto p = std::make_unique<Param>();
  p->name = name;
  p->shape = std::move(shape);
  p->value = std::move(init);
  p->moment1.assign(n, 0.0);
  p->moment2.assign(n, 0.0);
  Param& ref = *p;
  by_name_[name] = p.get();
  params_.push_back(std::move(p));
  return ref;
}

Param* ParamStore::find(const std::string& name) {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? nullptr : it->second;
}

const Param* ParamStore::find(const std::string& name) const {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? nullptr : it->second;
}

Param& ParamStore::at(const std::string& name) {
  Param* p = find(name);
  if (!p) throw UsageError("unknown parameter '" + name + "'");
  return *p;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->size();
  return n;
}

void ParamStore::zero_grads() {
  for (auto& p : params_) p->grad.clear();
}

void ParamStore::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint '" + path + "'");
  out.write(kMagic, sizeof(kMagic));
  write_pod(out, kVersion);
  write_pod(out, static_cast<std::uint64_t>(params_.size()));
  for (const auto& p : params_) {
    write_pod(out, static_cast<std::uint32_t>(p->name.size()));
    out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    write_pod(out, static_cast<std::uint32_t>(p->shape.size()));
    for (int d : p->shape) write_pod(out, static_cast<std::uint64_t>(d));
    out.write(reinterpret_cast<const char*>(p->value.data()),
              static_cast<std::streamsize>(p->value.size() * sizeof(double)));
  }
  if (!out) throw DataError("write failure on checkpoint '" + path + "'");
}

void ParamStore::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read checkpoint '" + path + "'");
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw CheckpointMismatch("bad magic in '" + path + "'");
  const auto version = read_pod<std::uint32_t>(in);
  if (version != kVersion)
    throw CheckpointMismatch("unsupported version " + std::to_string(version));
  const auto count = read_pod<std::uint64_t>(in);
  if (count != params_.size())
    throw CheckpointMismatch("checkpoint has " + std::to_string(count) +
                             " parameters, model has " +
                             std::to_string(params_.size()));
  for (auto& p : params_) {
    const auto name_len = read_pod<std::uint32_t>(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (name != p->name)
      throw CheckpointMismatch("parameter order: expected '" + p->name +
                               "', found '" + name + "'");
    const auto rank = read_pod<std::uint32_t>(in);
    if (rank != p->shape.size())
      throw CheckpointMismatch("rank of '" + name + "'");
    for (std::size_t d = 0; d < rank; ++d) {
      const auto dim = read_pod<std::uint64_t>(in);
      if (dim != static_cast<std::uint64_t>(p->shape[d]))
        throw CheckpointMismatch("dims of '" + name + "'");
    }
    in.read(reinterpret_cast<char*>(p->value.data()),
            static_cast<std::streamsize>(p->value.size() * sizeof(double)));
    if (!in) throw CheckpointMismatch("truncated data for '" + name + "'");
  }
}

}  // namespace demo
