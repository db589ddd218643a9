#pragma once

#include <cstdint>
#include <vector>

#include "ferm/grad/tensor.hpp"
#include "ferm/util/rng.hpp"

namespace ferm::aug {

// Batch of raw 8-bit images, NCHW row-major.
struct ImageBatch {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<uint8_t> data;

  ImageBatch() = default;
  ImageBatch(int n_, int c_, int h_, int w_)
      : n(n_), c(c_), h(h_), w(w_),
        data(static_cast<size_t>(n_) * c_ * h_ * w_, 0) {}

  int64_t image_numel() const { return static_cast<int64_t>(c) * h * w; }
  uint8_t* image(int i) { return data.data() + i * image_numel(); }
  const uint8_t* image(int i) const { return data.data() + i * image_numel(); }
};

// Each image is cropped independently at an integer offset drawn uniformly
// from [0, h-oh] x [0, w-ow] (row offset drawn first). Pixels are copied
// bit-exactly; no padding or interpolation.
ImageBatch random_crop(const ImageBatch& in, int oh, int ow, Rng& rng);

// Deterministic crop at offset (floor((h-oh)/2), floor((w-ow)/2)).
ImageBatch center_crop(const ImageBatch& in, int oh, int ow);

// Scale to [0,1] floats, same layout.
grad::Tensor<float> to_float(const ImageBatch& in);

// Fused crop + scale for the training hot paths; identical pixels to the
// two-step form.
grad::Tensor<float> random_crop_to_float(const ImageBatch& in, int oh, int ow,
                                         Rng& rng);
grad::Tensor<float> center_crop_to_float(const ImageBatch& in, int oh, int ow);

}  // namespace ferm::aug
