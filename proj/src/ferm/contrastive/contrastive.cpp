#include "ferm/contrastive/contrastive.hpp"

#include <numeric>
#include <utility>

#include "ferm/grad/ops.hpp"
#include "ferm/util/error.hpp"

namespace ferm::contrastive {

using grad::Tensor;

InfoNceResult infonce_loss(const Tensor<float>& queries, const Tensor<float>& keys,
                           const Tensor<float>& bilinear) {
  if (queries.ndim() != 2 || keys.ndim() != 2 || bilinear.ndim() != 2)
    raise(ErrorKind::shape_mismatch, "infonce: expected 2-d inputs");
  int k = queries.dim(0);
  int d = queries.dim(1);
  if (k < 2) raise(ErrorKind::invalid_argument, "infonce: batch must have at least 2 rows");
  if (keys.dim(0) != k || keys.dim(1) != d || bilinear.dim(0) != d || bilinear.dim(1) != d)
    raise(ErrorKind::shape_mismatch, "infonce: query/key/bilinear dims disagree");

  auto proj = grad::matmul(queries, bilinear);
  auto logits = grad::matmul_nt(proj, keys);
  std::vector<int> labels(static_cast<size_t>(k));
  std::iota(labels.begin(), labels.end(), 0);
  Tensor<float> probs;
  InfoNceResult out;
  out.loss = grad::softmax_xent_mean(logits, labels, &probs);
  int hits = 0;
  for (int i = 0; i < k; ++i) {
    const float* row = probs.ptr() + static_cast<int64_t>(i) * k;
    int best = 0;
    for (int j = 1; j < k; ++j)
      if (row[j] > row[best]) best = j;
    if (best == i) ++hits;
  }
  out.top1_acc = static_cast<double>(hits) / k;
  return out;
}

ContrastiveTrainer::ContrastiveTrainer(nets::Encoder query, PretrainConfig cfg)
    : query_(std::move(query)), key_(query_.clone()), cfg_(cfg) {
  bilinear_ = Tensor<float>::zeros({nets::kLatentDim, nets::kLatentDim});
  for (int i = 0; i < nets::kLatentDim; ++i)
    bilinear_.data()[static_cast<size_t>(i) * nets::kLatentDim + i] = 1.0f;
  bilinear_.set_requires_grad(true);
  query_.set_requires_grad(true);
  key_.set_requires_grad(false);
  auto params = query_.params();
  params.push_back(bilinear_);
  grad::AdamConfig<float> ac;
  ac.lr = cfg_.lr;
  opt_ = grad::Adam<float>(std::move(params), ac);
}

PretrainRecord ContrastiveTrainer::step(const aug::ImageBatch& frames, Rng& rng) {
  if (frames.n < 2)
    raise(ErrorKind::invalid_argument, "pretrain: batch must have at least 2 frames");
  auto q_in = aug::random_crop_to_float(frames, cfg_.crop, cfg_.crop, rng);
  auto k_in = aug::random_crop_to_float(frames, cfg_.crop, cfg_.crop, rng);

  Tensor<float> keys;
  {
    grad::NoGradScope<float> ng;
    keys = key_.forward(k_in);
  }

  PretrainRecord rec;
  grad::Tape<float> tape;
  {
    grad::TapeScope<float> scope(tape);
    auto q = query_.forward(q_in);
    auto r = infonce_loss(q, keys, bilinear_);
    opt_.zero_grad();
    tape.backward(r.loss);
    rec.loss = static_cast<double>(r.loss.item());
    rec.top1_acc = r.top1_acc;
  }
  opt_.step();

  auto kp = key_.params();
  auto qp = query_.params();
  grad::ema_update(kp, qp, cfg_.key_tau);

  rec.iteration = iteration_;
  ++iteration_;
  return rec;
}

std::vector<PretrainRecord> ContrastiveTrainer::run(const replay::ReplayBuffer& buffer,
                                                    int iterations, Rng& rng,
                                                    CsvWriter* csv) {
  if (iterations < 0)
    raise(ErrorKind::invalid_argument, "pretrain: negative iteration count");
  std::vector<PretrainRecord> records;
  records.reserve(static_cast<size_t>(iterations));
  if (iterations == 0) return records;
  if (buffer.size() == 0)
    raise(ErrorKind::state, "pretrain: buffer has no transitions to learn from");

  const auto& spec = buffer.obs_spec();
  for (int it = 0; it < iterations; ++it) {
    auto idx = buffer.sample_indices(cfg_.batch_size, rng);
    aug::ImageBatch frames(cfg_.batch_size, spec.c, spec.h, spec.w);
    for (int i = 0; i < cfg_.batch_size; ++i) {
      const auto& t = buffer.at(idx[static_cast<size_t>(i)]);
      std::copy(t.obs.begin(), t.obs.end(), frames.image(i));
    }
    PretrainRecord rec = step(frames, rng);
    if (csv)
      csv->write_row({format_int(rec.iteration), format_double(rec.loss),
                      format_double(rec.top1_acc)});
    records.push_back(rec);
  }
  return records;
}

}  // namespace ferm::contrastive
