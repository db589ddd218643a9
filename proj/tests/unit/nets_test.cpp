#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "doctest.h"
#include "ferm/grad/ops.hpp"
#include "ferm/grad/tensor.hpp"
#include "ferm/nets/checkpoint.hpp"
#include "ferm/nets/init.hpp"
#include "ferm/nets/nets.hpp"
#include "ferm/util/error.hpp"
#include "ferm/util/rng.hpp"
#include "test_util.hpp"

using namespace ferm;
using namespace ferm::nets;
using grad::Tensor;
using testutil::thrown_kind;

namespace {

Tensor<float> random_obs(int n, int c, int img, uint64_t seed) {
  Rng rng(seed);
  auto t = Tensor<float>::zeros({n, c, img, img});
  for (auto& v : t.data()) v = static_cast<float>(rng.uniform(0.0, 1.0));
  return t;
}

std::string tmp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_SUITE("nets") {

TEST_CASE("encoder flatten dimension for the supported input sizes") {
  CHECK(Encoder::flat_dim(40) == 5408);
  CHECK(Encoder::flat_dim(84) == 39200);
  CHECK(thrown_kind([] { Encoder::flat_dim(4); }) == ErrorKind::invalid_argument);
}

TEST_CASE("orthogonal init produces orthonormal rows (and columns when tall)") {
  Rng rng(17);
  auto w = orthogonal_init(50, 200, rng);
  REQUIRE(w.shape() == std::vector<int>({50, 200}));
  for (int i = 0; i < 50; ++i)
    for (int j = i; j < 50; ++j) {
      double dot = 0.0;
      for (int k = 0; k < 200; ++k)
        dot += static_cast<double>(w.data()[i * 200 + k]) * w.data()[j * 200 + k];
      CHECK(std::abs(dot - (i == j ? 1.0 : 0.0)) < 1e-5);
    }
  auto tall = orthogonal_init(9, 4, rng);
  REQUIRE(tall.shape() == std::vector<int>({9, 4}));
  for (int i = 0; i < 4; ++i)
    for (int j = i; j < 4; ++j) {
      double dot = 0.0;
      for (int k = 0; k < 9; ++k)
        dot += static_cast<double>(tall.data()[k * 4 + i]) * tall.data()[k * 4 + j];
      CHECK(std::abs(dot - (i == j ? 1.0 : 0.0)) < 1e-5);
    }
}

TEST_CASE("fan-in uniform init stays inside its bound") {
  Rng rng(4);
  auto w = uniform_fan_in({32, 3, 3, 3}, 27, rng);
  float bound = 1.0f / std::sqrt(27.0f);
  for (float v : w.data()) {
    CHECK(v <= bound);
    CHECK(v >= -bound);
  }
  bool any_positive = false, any_negative = false;
  for (float v : w.data()) {
    any_positive |= v > 0.0f;
    any_negative |= v < 0.0f;
  }
  CHECK(any_positive);
  CHECK(any_negative);
}

TEST_CASE("encoder forward: shape, open-interval range, purity") {
  Rng rng(100);
  Encoder enc = Encoder::init(3, 40, rng);
  auto x = random_obs(4, 3, 40, 8);
  auto z1 = enc.forward(x);
  REQUIRE(z1.shape() == std::vector<int>({4, kLatentDim}));
  for (float v : z1.data()) {
    CHECK(v > -1.0f);
    CHECK(v < 1.0f);
  }
  auto z2 = enc.forward(x);
  for (size_t i = 0; i < z1.data().size(); ++i) REQUIRE(z1.data()[i] == z2.data()[i]);
}

TEST_CASE("encoder rejects mismatched channel count and spatial size") {
  Rng rng(100);
  Encoder enc = Encoder::init(3, 40, rng);
  auto wrong_size = random_obs(1, 3, 48, 8);
  CHECK(thrown_kind([&] { enc.forward(wrong_size); }) == ErrorKind::shape_mismatch);
  auto wrong_c = random_obs(1, 1, 40, 8);
  CHECK(thrown_kind([&] { enc.forward(wrong_c); }) == ErrorKind::shape_mismatch);
  auto not_4d = Tensor<float>::zeros({3, 40, 40});
  CHECK(thrown_kind([&] { enc.forward(not_4d); }) == ErrorKind::shape_mismatch);
}

TEST_CASE("encoder gradients reach every parameter") {
  Rng rng(5);
  Encoder enc = Encoder::init(3, 40, rng);
  enc.set_requires_grad(true);
  auto x = random_obs(2, 3, 40, 77);
  grad::Tape<float> tape;
  {
    grad::TapeScope<float> scope(tape);
    auto z = enc.forward(x);
    auto loss = grad::mean_all(grad::mul(z, z));
    tape.backward(loss);
  }
  for (auto& p : enc.params()) {
    REQUIRE(p.has_grad());
    double norm = 0.0;
    for (float g : p.grad()) norm += static_cast<double>(g) * g;
    CHECK(norm > 0.0);
  }
}

TEST_CASE("encoder clone is independent storage with identical behavior") {
  Rng rng(21);
  Encoder enc = Encoder::init(3, 40, rng);
  Encoder twin = enc.clone();
  auto x = random_obs(2, 3, 40, 3);
  auto za = enc.forward(x);
  auto zb = twin.forward(x);
  for (size_t i = 0; i < za.data().size(); ++i) REQUIRE(za.data()[i] == zb.data()[i]);
  twin.k1.data()[0] += 1.0f;
  CHECK(enc.k1.data()[0] != twin.k1.data()[0]);
}

TEST_CASE("actor emits means and clamped log-sigmas") {
  Rng rng(33);
  Actor actor = Actor::init(4, rng);
  Rng lr(2);
  auto latent = Tensor<float>::zeros({3, kLatentDim});
  for (auto& v : latent.data()) v = static_cast<float>(lr.uniform(-1.0, 1.0));
  auto [mu, log_sig] = actor.forward(latent);
  REQUIRE(mu.shape() == std::vector<int>({3, 4}));
  REQUIRE(log_sig.shape() == std::vector<int>({3, 4}));
  for (float v : log_sig.data()) {
    CHECK(v >= -10.0f);
    CHECK(v <= 2.0f);
  }
  auto bad = Tensor<float>::zeros({3, kLatentDim + 1});
  CHECK(thrown_kind([&] { actor.forward(bad); }) == ErrorKind::shape_mismatch);
}

TEST_CASE("twin critics are independent and reject out-of-range actions") {
  Rng rng(9);
  Critic critic = Critic::init(2, rng);
  Rng lr(6);
  auto latent = Tensor<float>::zeros({5, kLatentDim});
  for (auto& v : latent.data()) v = static_cast<float>(lr.uniform(-1.0, 1.0));
  auto action = Tensor<float>::zeros({5, 2});
  for (auto& v : action.data()) v = static_cast<float>(lr.uniform(-1.0, 1.0));
  auto [q1, q2] = critic.forward(latent, action);
  REQUIRE(q1.shape() == std::vector<int>({5, 1}));
  REQUIRE(q2.shape() == std::vector<int>({5, 1}));
  bool differ = false;
  for (int i = 0; i < 5; ++i)
    if (q1.data()[i] != q2.data()[i]) differ = true;
  CHECK(differ);

  auto bad = Tensor<float>::from_data({1, 2}, {0.0f, 1.5f});
  auto one = Tensor<float>::zeros({1, kLatentDim});
  CHECK(thrown_kind([&] { critic.forward(one, bad); }) == ErrorKind::invalid_argument);
  auto nan_action = Tensor<float>::from_data({1, 2}, {0.0f, std::nanf("")});
  CHECK(thrown_kind([&] { critic.forward(one, nan_action); }) == ErrorKind::invalid_argument);
  auto wrong_dim = Tensor<float>::zeros({1, 3});
  CHECK(thrown_kind([&] { critic.forward(one, wrong_dim); }) == ErrorKind::shape_mismatch);
}

TEST_CASE("checkpoint round-trip is bit-exact through fresh networks") {
  Rng rng(123);
  Encoder enc = Encoder::init(3, 40, rng);
  Actor actor = Actor::init(4, rng);
  Critic critic = Critic::init(4, rng);
  NamedTensors all;
  for (auto& kv : enc.named("encoder")) all.push_back(kv);
  for (auto& kv : actor.named("actor")) all.push_back(kv);
  for (auto& kv : critic.named("critic")) all.push_back(kv);

  std::string path = tmp_path("nets_roundtrip.fermnets");
  save_tensors(path, all);
  auto loaded = load_tensors(path);
  REQUIRE(loaded.size() == all.size());
  for (size_t i = 0; i < all.size(); ++i) {
    REQUIRE(loaded[i].first == all[i].first);
    REQUIRE(loaded[i].second.shape() == all[i].second.shape());
    REQUIRE(loaded[i].second.data() == all[i].second.data());
  }

  Rng other(999);
  Encoder enc2 = Encoder::init(3, 40, other);
  Actor actor2 = Actor::init(4, other);
  Critic critic2 = Critic::init(4, other);
  NamedTensors dst;
  for (auto& kv : enc2.named("encoder")) dst.push_back(kv);
  for (auto& kv : actor2.named("actor")) dst.push_back(kv);
  for (auto& kv : critic2.named("critic")) dst.push_back(kv);
  load_into(path, dst);

  auto x = random_obs(2, 3, 40, 55);
  auto za = enc.forward(x);
  auto zb = enc2.forward(x);
  for (size_t i = 0; i < za.data().size(); ++i) REQUIRE(za.data()[i] == zb.data()[i]);
  auto [m1, s1] = actor.forward(za);
  auto [m2, s2] = actor2.forward(zb);
  for (size_t i = 0; i < m1.data().size(); ++i) REQUIRE(m1.data()[i] == m2.data()[i]);
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint corruption yields typed errors") {
  Rng rng(7);
  auto t = Tensor<float>::zeros({3, 2});
  for (auto& v : t.data()) v = rng.normalf();
  std::string path = tmp_path("nets_corrupt.fermnets");
  save_tensors(path, {{"solo", t}});

  auto clobber = [&](size_t offset, char value) {
    std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(static_cast<std::streamoff>(offset));
    f.put(value);
  };

  clobber(0, 'X');
  CHECK(thrown_kind([&] { load_tensors(path); }) == ErrorKind::bad_magic);
  clobber(0, 'F');
  clobber(8, 9);
  CHECK(thrown_kind([&] { load_tensors(path); }) == ErrorKind::version_mismatch);
  clobber(8, 1);

  auto full = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, full - 5);
  CHECK(thrown_kind([&] { load_tensors(path); }) == ErrorKind::truncated_file);

  save_tensors(path, {{"solo", t}});
  CHECK(thrown_kind([&] {
          load_into(path, {{"missing", Tensor<float>::zeros({3, 2})}});
        }) == ErrorKind::invalid_argument);
  CHECK(thrown_kind([&] {
          load_into(path, {{"solo", Tensor<float>::zeros({2, 3})}});
        }) == ErrorKind::shape_mismatch);
  CHECK(thrown_kind([&] { load_tensors(tmp_path("no_such_file.fermnets")); }) ==
        ErrorKind::io);
  std::filesystem::remove(path);
}

}  // TEST_SUITE
