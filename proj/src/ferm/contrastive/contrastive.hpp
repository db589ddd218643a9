#pragma once

#include <vector>

#include "ferm/augment/augment.hpp"
#include "ferm/grad/optim.hpp"
#include "ferm/grad/tensor.hpp"
#include "ferm/nets/nets.hpp"
#include "ferm/replay/replay.hpp"
#include "ferm/util/csv.hpp"
#include "ferm/util/rng.hpp"

namespace ferm::contrastive {

struct InfoNceResult {
  grad::Tensor<float> loss;
  double top1_acc = 0.0;
};

// Bilinear-similarity InfoNCE over a batch: logits[i][j] = q_i . (W k_j),
// with the matching index as the positive. Keys must already be gradient-free.
InfoNceResult infonce_loss(const grad::Tensor<float>& queries,
                           const grad::Tensor<float>& keys,
                           const grad::Tensor<float>& bilinear);

struct PretrainConfig {
  int batch_size = 128;
  int crop = 40;
  float key_tau = 0.05f;
  float lr = 1e-4f;
};

struct PretrainRecord {
  int iteration = 0;
  double loss = 0.0;
  double top1_acc = 0.0;
};

// Pre-training state: the query encoder handle is shared with the caller (it
// IS the future online encoder), the key encoder tracks it by EMA, and the
// bilinear matrix starts as identity and is dropped after pre-training.
class ContrastiveTrainer {
 public:
  ContrastiveTrainer(nets::Encoder query, PretrainConfig cfg);

  // One optimizer step on a batch of raw (pre-crop) frames: two independent
  // crops per frame, InfoNCE on (query, key) latents, Adam on the query
  // encoder and bilinear matrix, then an EMA update of the key encoder.
  PretrainRecord step(const aug::ImageBatch& frames, Rng& rng);

  // Frames are drawn uniformly with replacement from the buffer's stored
  // transitions. Appends one record per iteration; writes (iteration, loss,
  // top1_acc) rows when csv is non-null.
  std::vector<PretrainRecord> run(const replay::ReplayBuffer& buffer,
                                  int iterations, Rng& rng,
                                  CsvWriter* csv = nullptr);

  nets::Encoder& query() { return query_; }
  nets::Encoder& key() { return key_; }
  grad::Tensor<float>& bilinear() { return bilinear_; }
  int iteration() const { return iteration_; }

 private:
  nets::Encoder query_;
  nets::Encoder key_;
  grad::Tensor<float> bilinear_;
  grad::Adam<float> opt_;
  PretrainConfig cfg_;
  int iteration_ = 0;
};

}  // namespace ferm::contrastive
