#include "ferm/replay/replay.hpp"

#include <cstring>
#include <fstream>

#include "ferm/util/error.hpp"
#include "ferm/util/io.hpp"

namespace ferm::replay {

namespace {
constexpr char kMagic[8] = {'F', 'E', 'R', 'M', 'D', 'E', 'M', 'O'};
constexpr uint32_t kVersion = 1;
}  // namespace

ReplayBuffer::ReplayBuffer(ObsSpec obs, int act_dim, int capacity)
    : obs_(obs), act_dim_(act_dim), capacity_(capacity) {
  if (obs.c <= 0 || obs.h <= 0 || obs.w <= 0)
    raise(ErrorKind::invalid_argument, "replay: observation dims must be positive");
  if (act_dim <= 0) raise(ErrorKind::invalid_argument, "replay: action dim must be positive");
  if (capacity <= 0) raise(ErrorKind::invalid_argument, "replay: capacity must be positive");
  storage_.reserve(64);
}

void ReplayBuffer::validate(const Transition& t) const {
  size_t on = static_cast<size_t>(obs_.numel());
  if (t.obs.size() != on || t.next_obs.size() != on)
    raise(ErrorKind::shape_mismatch, "replay: observation size does not match buffer spec");
  if (t.action.size() != static_cast<size_t>(act_dim_))
    raise(ErrorKind::shape_mismatch, "replay: action size does not match buffer spec");
}

void ReplayBuffer::seed_with_demonstrations(const std::vector<Episode>& episodes) {
  if (seeded_ || !storage_.empty())
    raise(ErrorKind::state, "replay: buffer already seeded");
  size_t total = 0;
  for (const auto& ep : episodes) {
    if (ep.empty())
      raise(ErrorKind::invalid_argument, "replay: demonstration episode has zero transitions");
    total += ep.size();
  }
  if (total > static_cast<size_t>(capacity_))
    raise(ErrorKind::invalid_argument, "replay: demonstrations exceed buffer capacity");
  storage_.reserve(total);
  for (const auto& ep : episodes) {
    for (const auto& t : ep) {
      validate(t);
      storage_.push_back(t);
      storage_.back().is_demo = true;
    }
  }
  demo_count_ = static_cast<int>(total);
  cursor_ = total;
  seeded_ = true;
}

void ReplayBuffer::push(Transition t) {
  if (!seeded_)
    raise(ErrorKind::state, "replay: push before seed_with_demonstrations");
  validate(t);
  t.is_demo = false;
  if (storage_.size() < static_cast<size_t>(capacity_)) {
    storage_.push_back(std::move(t));
    return;
  }
  if (demo_count_ == capacity_)
    raise(ErrorKind::state, "replay: buffer is full of protected demonstrations");
  if (cursor_ >= storage_.size()) cursor_ = static_cast<size_t>(demo_count_);
  storage_[cursor_] = std::move(t);
  ++cursor_;
}

std::vector<size_t> ReplayBuffer::sample_indices(int n, Rng& rng) const {
  if (n <= 0) raise(ErrorKind::invalid_argument, "replay: sample size must be positive");
  if (storage_.empty()) raise(ErrorKind::state, "replay: cannot sample from empty buffer");
  std::vector<size_t> idx(static_cast<size_t>(n));
  for (auto& i : idx) i = static_cast<size_t>(rng.uniform_u64(storage_.size()));
  return idx;
}

namespace {

size_t record_bytes(const ObsSpec& obs, int act_dim) {
  return 2 * static_cast<size_t>(obs.numel()) + 4 * static_cast<size_t>(act_dim) + 4 + 1;
}

void encode_f32(uint8_t* p, float v) {
  uint32_t u = std::bit_cast<uint32_t>(v);
  p[0] = static_cast<uint8_t>(u & 0xff);
  p[1] = static_cast<uint8_t>((u >> 8) & 0xff);
  p[2] = static_cast<uint8_t>((u >> 16) & 0xff);
  p[3] = static_cast<uint8_t>((u >> 24) & 0xff);
}

float decode_f32(const uint8_t* p) {
  uint32_t u = static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
               (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
  return std::bit_cast<float>(u);
}

}  // namespace

void save_demos(const std::string& path, const ObsSpec& obs, int act_dim,
                const std::vector<Episode>& episodes) {
  if (obs.c <= 0 || obs.h <= 0 || obs.w <= 0 || act_dim <= 0)
    raise(ErrorKind::invalid_argument, "demo file: dims must be positive");
  std::ofstream os(path, std::ios::binary);
  if (!os) raise(ErrorKind::io, "demo file: cannot open for writing: " + path);
  os.write(kMagic, 8);
  io::write_u32(os, kVersion);
  io::write_u32(os, static_cast<uint32_t>(obs.c));
  io::write_u32(os, static_cast<uint32_t>(obs.h));
  io::write_u32(os, static_cast<uint32_t>(obs.w));
  io::write_u32(os, static_cast<uint32_t>(act_dim));
  io::write_u32(os, static_cast<uint32_t>(episodes.size()));
  for (const auto& ep : episodes) {
    if (ep.empty())
      raise(ErrorKind::invalid_argument, "demo file: episode has zero transitions");
    io::write_u32(os, static_cast<uint32_t>(ep.size()));
  }
  size_t on = static_cast<size_t>(obs.numel());
  std::vector<uint8_t> rec(record_bytes(obs, act_dim));
  for (const auto& ep : episodes) {
    for (const auto& t : ep) {
      if (t.obs.size() != on || t.next_obs.size() != on)
        raise(ErrorKind::shape_mismatch, "demo file: observation size mismatch");
      if (t.action.size() != static_cast<size_t>(act_dim))
        raise(ErrorKind::shape_mismatch, "demo file: action size mismatch");
      uint8_t* p = rec.data();
      std::memcpy(p, t.obs.data(), on);
      p += on;
      for (float a : t.action) {
        encode_f32(p, a);
        p += 4;
      }
      encode_f32(p, t.reward);
      p += 4;
      std::memcpy(p, t.next_obs.data(), on);
      p += on;
      *p = t.done ? 1 : 0;
      os.write(reinterpret_cast<const char*>(rec.data()),
               static_cast<std::streamsize>(rec.size()));
    }
  }
  if (!os) raise(ErrorKind::io, "demo file: write failed: " + path);
}

DemoFile load_demos(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) raise(ErrorKind::io, "demo file: cannot open: " + path);
  char magic[8];
  is.read(magic, 8);
  if (is.gcount() != 8 || std::memcmp(magic, kMagic, 8) != 0)
    raise(ErrorKind::bad_magic, "demo file: bad magic in " + path);
  uint32_t version = io::read_u32(is, "demo file version");
  if (version != kVersion)
    raise(ErrorKind::version_mismatch,
          "demo file: unsupported version " + std::to_string(version));
  DemoFile out;
  out.obs.c = static_cast<int>(io::read_u32(is, "demo file obs channels"));
  out.obs.h = static_cast<int>(io::read_u32(is, "demo file obs height"));
  out.obs.w = static_cast<int>(io::read_u32(is, "demo file obs width"));
  out.act_dim = static_cast<int>(io::read_u32(is, "demo file action dim"));
  if (out.obs.c <= 0 || out.obs.c > 16 || out.obs.h <= 0 || out.obs.h > 4096 ||
      out.obs.w <= 0 || out.obs.w > 4096 || out.act_dim <= 0 || out.act_dim > 4096)
    raise(ErrorKind::io, "demo file: implausible header dims in " + path);
  uint32_t n_eps = io::read_u32(is, "demo file episode count");
  std::vector<uint32_t> lens(n_eps);
  for (uint32_t e = 0; e < n_eps; ++e) {
    lens[e] = io::read_u32(is, "demo file episode table");
    if (lens[e] == 0)
      raise(ErrorKind::io, "demo file: zero-length episode in table");
  }
  size_t on = static_cast<size_t>(out.obs.numel());
  std::vector<uint8_t> rec(record_bytes(out.obs, out.act_dim));
  out.episodes.resize(n_eps);
  size_t rec_index = 0;
  for (uint32_t e = 0; e < n_eps; ++e) {
    out.episodes[e].resize(lens[e]);
    for (uint32_t i = 0; i < lens[e]; ++i, ++rec_index) {
      is.read(reinterpret_cast<char*>(rec.data()),
              static_cast<std::streamsize>(rec.size()));
      if (static_cast<size_t>(is.gcount()) != rec.size())
        raise(ErrorKind::truncated_file,
              "demo file: truncated at record " + std::to_string(rec_index));
      Transition& t = out.episodes[e][i];
      const uint8_t* p = rec.data();
      t.obs.assign(p, p + on);
      p += on;
      t.action.resize(static_cast<size_t>(out.act_dim));
      for (auto& a : t.action) {
        a = decode_f32(p);
        p += 4;
      }
      t.reward = decode_f32(p);
      p += 4;
      t.next_obs.assign(p, p + on);
      p += on;
      t.done = (*p != 0);
      t.is_demo = true;
    }
  }
  return out;
}

}  // namespace ferm::replay
