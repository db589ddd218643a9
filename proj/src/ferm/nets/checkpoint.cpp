#include "ferm/nets/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "ferm/util/error.hpp"
#include "ferm/util/io.hpp"

namespace ferm::nets {

namespace {
constexpr char kMagic[8] = {'F', 'E', 'R', 'M', 'N', 'E', 'T', 'S'};
constexpr uint32_t kVersion = 1;
}  // namespace

void save_tensors(const std::string& path, const NamedTensors& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) raise(ErrorKind::io, "cannot open for write: " + path);
  os.write(kMagic, sizeof(kMagic));
  io::write_u32(os, kVersion);
  io::write_u32(os, static_cast<uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    io::write_str(os, name);
    io::write_u32(os, static_cast<uint32_t>(t.ndim()));
    for (int d = 0; d < t.ndim(); ++d)
      io::write_u32(os, static_cast<uint32_t>(t.dim(d)));
    io::write_f32_array(os, t.data().data(), t.data().size());
  }
  os.flush();
  if (!os) raise(ErrorKind::io, "write failed: " + path);
}

NamedTensors load_tensors(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) raise(ErrorKind::io, "cannot open for read: " + path);
  char magic[8] = {};
  is.read(magic, sizeof(magic));
  if (is.gcount() != sizeof(magic) || std::memcmp(magic, kMagic, sizeof(magic)) != 0)
    raise(ErrorKind::bad_magic, "not a network checkpoint: " + path);
  uint32_t version = io::read_u32(is, "checkpoint version");
  if (version != kVersion)
    raise(ErrorKind::version_mismatch,
          "checkpoint version " + std::to_string(version) + ", expected " +
              std::to_string(kVersion));
  uint32_t count = io::read_u32(is, "tensor count");
  NamedTensors out;
  out.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    std::string name = io::read_str(is, "tensor name");
    uint32_t nd = io::read_u32(is, "tensor rank");
    if (nd == 0 || nd > 8)
      raise(ErrorKind::invalid_argument, "bad tensor rank in " + path);
    std::vector<int> shape(nd);
    for (auto& d : shape) d = static_cast<int>(io::read_u32(is, "tensor dim"));
    auto t = grad::Tensor<float>::zeros(shape);
    io::read_f32_array(is, t.data().data(), t.data().size(),
                       "tensor data for " + name);
    out.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

void load_into(const std::string& path, NamedTensors dst) {
  auto loaded = load_tensors(path);
  for (auto& [name, t] : dst) {
    const grad::Tensor<float>* src = nullptr;
    for (const auto& [lname, lt] : loaded)
      if (lname == name) {
        src = &lt;
        break;
      }
    if (!src)
      raise(ErrorKind::invalid_argument, "checkpoint missing tensor: " + name);
    if (src->shape() != t.shape())
      raise(ErrorKind::shape_mismatch, "checkpoint shape mismatch for " + name);
    t.data() = src->data();
  }
}

}  // namespace ferm::nets
