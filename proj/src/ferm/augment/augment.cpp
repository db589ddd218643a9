#include "ferm/augment/augment.hpp"

#include <cstring>

#include "ferm/util/error.hpp"

namespace ferm::aug {

namespace {

void check_crop(const ImageBatch& in, int oh, int ow) {
  if (in.n <= 0 || in.c <= 0 || in.h <= 0 || in.w <= 0)
    raise(ErrorKind::invalid_argument, "crop: empty image batch");
  if (oh <= 0 || ow <= 0 || oh > in.h || ow > in.w)
    raise(ErrorKind::invalid_argument, "crop: output size exceeds input size");
}

void copy_window(const ImageBatch& in, int i, int dy, int dx, int oh, int ow,
                 uint8_t* dst) {
  const uint8_t* src = in.image(i);
  for (int ch = 0; ch < in.c; ++ch) {
    const uint8_t* plane = src + static_cast<int64_t>(ch) * in.h * in.w;
    for (int y = 0; y < oh; ++y)
      std::memcpy(dst + (static_cast<int64_t>(ch) * oh + y) * ow,
                  plane + static_cast<int64_t>(dy + y) * in.w + dx,
                  static_cast<size_t>(ow));
  }
}

void copy_window_float(const ImageBatch& in, int i, int dy, int dx, int oh,
                       int ow, float* dst) {
  const uint8_t* src = in.image(i);
  constexpr float kScale = 1.0f / 255.0f;
  for (int ch = 0; ch < in.c; ++ch) {
    const uint8_t* plane = src + static_cast<int64_t>(ch) * in.h * in.w;
    for (int y = 0; y < oh; ++y) {
      const uint8_t* row = plane + static_cast<int64_t>(dy + y) * in.w + dx;
      float* out = dst + (static_cast<int64_t>(ch) * oh + y) * ow;
      for (int x = 0; x < ow; ++x) out[x] = static_cast<float>(row[x]) * kScale;
    }
  }
}

}  // namespace

ImageBatch random_crop(const ImageBatch& in, int oh, int ow, Rng& rng) {
  check_crop(in, oh, ow);
  ImageBatch out(in.n, in.c, oh, ow);
  for (int i = 0; i < in.n; ++i) {
    int dy = rng.uniform_int(in.h - oh + 1);
    int dx = rng.uniform_int(in.w - ow + 1);
    copy_window(in, i, dy, dx, oh, ow, out.image(i));
  }
  return out;
}

ImageBatch center_crop(const ImageBatch& in, int oh, int ow) {
  check_crop(in, oh, ow);
  ImageBatch out(in.n, in.c, oh, ow);
  int dy = (in.h - oh) / 2;
  int dx = (in.w - ow) / 2;
  for (int i = 0; i < in.n; ++i) copy_window(in, i, dy, dx, oh, ow, out.image(i));
  return out;
}

grad::Tensor<float> to_float(const ImageBatch& in) {
  if (in.n <= 0 || in.c <= 0 || in.h <= 0 || in.w <= 0)
    raise(ErrorKind::invalid_argument, "to_float: empty image batch");
  auto t = grad::Tensor<float>::zeros({in.n, in.c, in.h, in.w});
  float* dst = t.data().data();
  constexpr float kScale = 1.0f / 255.0f;
  for (size_t i = 0; i < in.data.size(); ++i)
    dst[i] = static_cast<float>(in.data[i]) * kScale;
  return t;
}

grad::Tensor<float> random_crop_to_float(const ImageBatch& in, int oh, int ow,
                                         Rng& rng) {
  check_crop(in, oh, ow);
  auto t = grad::Tensor<float>::zeros({in.n, in.c, oh, ow});
  int64_t img = static_cast<int64_t>(in.c) * oh * ow;
  for (int i = 0; i < in.n; ++i) {
    int dy = rng.uniform_int(in.h - oh + 1);
    int dx = rng.uniform_int(in.w - ow + 1);
    copy_window_float(in, i, dy, dx, oh, ow, t.data().data() + i * img);
  }
  return t;
}

grad::Tensor<float> center_crop_to_float(const ImageBatch& in, int oh, int ow) {
  check_crop(in, oh, ow);
  auto t = grad::Tensor<float>::zeros({in.n, in.c, oh, ow});
  int dy = (in.h - oh) / 2;
  int dx = (in.w - ow) / 2;
  int64_t img = static_cast<int64_t>(in.c) * oh * ow;
  for (int i = 0; i < in.n; ++i)
    copy_window_float(in, i, dy, dx, oh, ow, t.data().data() + i * img);
  return t;
}

}  // namespace ferm::aug
