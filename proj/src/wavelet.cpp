#include "sarl/wavelet.hpp"

#include <cmath>
#include <string>

#include "sarl/errors.hpp"

namespace sarl::wavelet {
namespace {

// Analysis low-pass, db4 (Daubechies, 4 vanishing moments).
constexpr std::array<double, 8> kLowpass = {
    0.23037781330885523,  0.7148465705525415,   0.6308807679295904,  -0.02798376941698385,
    -0.18703481171888114, 0.030841381835986965, 0.032883011666982945, -0.010597401784997278};

void check_shape(std::size_t h, std::size_t w, std::size_t levels) {
  if (levels == 0) throw ConfigError("wavelet transform needs at least one level");
  const std::size_t m = std::size_t{1} << levels;
  if (h == 0 || w == 0 || h % m != 0 || w % m != 0)
    throw ConfigError("image " + std::to_string(h) + "x" + std::to_string(w) +
                      " is not divisible by 2^" + std::to_string(levels));
}

// One periodic analysis step on x[0], x[stride], ... (n samples): approx to
// the first half, detail to the second half.
void analyze(double* x, std::size_t n, std::size_t stride, std::vector<double>& tmp) {
  const auto g = db4_highpass();
  tmp.assign(n, 0.0);
  const std::size_t half = n / 2;
  // The high-pass output is accumulated from first differences weighted by
  // the running sums of g, so constant input yields exactly zero detail.
  std::array<double, 7> gsum{};
  double acc = 0.0;
  for (std::size_t k = 0; k < 7; ++k) gsum[k] = acc += g[k];
  for (std::size_t i = 0; i < half; ++i) {
    double a = 0.0, d = 0.0;
    for (std::size_t k = 0; k < 8; ++k) a += kLowpass[k] * x[((2 * i + k) % n) * stride];
    for (std::size_t k = 0; k < 7; ++k)
      d += gsum[k] * (x[((2 * i + k) % n) * stride] - x[((2 * i + k + 1) % n) * stride]);
    tmp[i] = a;
    tmp[half + i] = d;
  }
  for (std::size_t i = 0; i < n; ++i) x[i * stride] = tmp[i];
}

void synthesize(double* x, std::size_t n, std::size_t stride, std::vector<double>& tmp) {
  const auto g = db4_highpass();
  tmp.assign(n, 0.0);
  const std::size_t half = n / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const double a = x[i * stride];
    const double d = x[(half + i) * stride];
    for (std::size_t k = 0; k < 8; ++k) tmp[(2 * i + k) % n] += kLowpass[k] * a + g[k] * d;
  }
  for (std::size_t i = 0; i < n; ++i) x[i * stride] = tmp[i];
}

// Single-channel packed transform on a row-major H x W buffer.
void forward_packed(double* img, std::size_t h, std::size_t w, std::size_t levels) {
  std::vector<double> tmp;
  std::size_t rh = h, rw = w;
  for (std::size_t l = 0; l < levels; ++l) {
    for (std::size_t r = 0; r < rh; ++r) analyze(img + r * w, rw, 1, tmp);
    for (std::size_t col = 0; col < rw; ++col) analyze(img + col, rh, w, tmp);
    rh /= 2;
    rw /= 2;
  }
}

void inverse_packed(double* img, std::size_t h, std::size_t w, std::size_t levels) {
  std::vector<double> tmp;
  for (std::size_t l = levels; l-- > 0;) {
    const std::size_t rh = h >> l, rw = w >> l;
    for (std::size_t col = 0; col < rw; ++col) synthesize(img + col, rh, w, tmp);
    for (std::size_t r = 0; r < rh; ++r) synthesize(img + r * w, rw, 1, tmp);
  }
}

Band copy_band(const std::vector<double>& img, std::size_t w, std::size_t r0, std::size_t c0,
               std::size_t rows, std::size_t cols) {
  Band b{rows, cols, std::vector<double>(rows * cols)};
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) b.values[r * cols + c] = img[(r0 + r) * w + c0 + c];
  return b;
}

void paste_band(std::vector<double>& img, std::size_t w, std::size_t r0, std::size_t c0,
                const Band& b, std::size_t rows, std::size_t cols) {
  if (b.rows != rows || b.cols != cols || b.values.size() != rows * cols)
    throw DataError("idwt2: band shape does not match the pyramid layout");
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) img[(r0 + r) * w + c0 + c] = b.values[r * cols + c];
}

std::vector<double> gather_channel(std::span<const double> stack, std::size_t hw, std::size_t c,
                                   std::size_t k) {
  std::vector<double> out(hw);
  for (std::size_t i = 0; i < hw; ++i) out[i] = stack[i * c + k];
  return out;
}

}  // namespace

const std::array<double, 8>& db4_lowpass() { return kLowpass; }

std::array<double, 8> db4_highpass() {
  std::array<double, 8> g{};
  for (std::size_t k = 0; k < 8; ++k) g[k] = (k % 2 == 0 ? 1.0 : -1.0) * kLowpass[7 - k];
  return g;
}

std::size_t Pyramid::coefficient_count() const {
  std::size_t n = approx.values.size();
  for (const auto& d : details) n += d.lh.values.size() + d.hl.values.size() + d.hh.values.size();
  return n;
}

Pyramid dwt2(std::span<const double> img, std::size_t h, std::size_t w, std::size_t levels) {
  check_shape(h, w, levels);
  if (img.size() != h * w) throw DataError("dwt2: image size mismatch");
  std::vector<double> packed(img.begin(), img.end());
  forward_packed(packed.data(), h, w, levels);
  Pyramid p;
  for (std::size_t l = 1; l <= levels; ++l) {
    const std::size_t rh = h >> l, rw = w >> l;
    p.details.push_back({copy_band(packed, w, 0, rw, rh, rw), copy_band(packed, w, rh, 0, rh, rw),
                         copy_band(packed, w, rh, rw, rh, rw)});
  }
  p.approx = copy_band(packed, w, 0, 0, h >> levels, w >> levels);
  return p;
}

std::vector<double> idwt2(const Pyramid& pyr) {
  const std::size_t levels = pyr.details.size();
  if (levels == 0) throw DataError("idwt2: pyramid has no detail levels");
  const std::size_t h = pyr.details[0].lh.rows * 2, w = pyr.details[0].lh.cols * 2;
  check_shape(h, w, levels);
  std::vector<double> packed(h * w, 0.0);
  for (std::size_t l = 1; l <= levels; ++l) {
    const std::size_t rh = h >> l, rw = w >> l;
    const auto& d = pyr.details[l - 1];
    paste_band(packed, w, 0, rw, d.lh, rh, rw);
    paste_band(packed, w, rh, 0, d.hl, rh, rw);
    paste_band(packed, w, rh, rw, d.hh, rh, rw);
  }
  paste_band(packed, w, 0, 0, pyr.approx, h >> levels, w >> levels);
  inverse_packed(packed.data(), h, w, levels);
  return packed;
}

std::vector<double> dwt2_packed(std::span<const double> stack, std::size_t h, std::size_t w,
                                std::size_t c, std::size_t levels) {
  check_shape(h, w, levels);
  if (stack.size() != h * w * c) throw DataError("dwt2: stack size mismatch");
  std::vector<double> out(stack.size());
  for (std::size_t k = 0; k < c; ++k) {
    auto img = gather_channel(stack, h * w, c, k);
    forward_packed(img.data(), h, w, levels);
    for (std::size_t i = 0; i < h * w; ++i) out[i * c + k] = img[i];
  }
  return out;
}

std::vector<double> idwt2_packed(std::span<const double> packed, std::size_t h, std::size_t w,
                                 std::size_t c, std::size_t levels) {
  check_shape(h, w, levels);
  if (packed.size() != h * w * c) throw DataError("idwt2: stack size mismatch");
  std::vector<double> out(packed.size());
  for (std::size_t k = 0; k < c; ++k) {
    auto img = gather_channel(packed, h * w, c, k);
    inverse_packed(img.data(), h, w, levels);
    for (std::size_t i = 0; i < h * w; ++i) out[i * c + k] = img[i];
  }
  return out;
}

std::vector<double> detail_weights(std::size_t h, std::size_t w, std::size_t levels) {
  check_shape(h, w, levels);
  std::vector<double> wts(h * w, 0.0);
  for (std::size_t l = 1; l <= levels; ++l) {
    const std::size_t rh = h >> l, rw = w >> l;
    const double v = 1.0 / static_cast<double>(rh * rw);
    for (std::size_t r = 0; r < 2 * rh; ++r)
      for (std::size_t col = 0; col < 2 * rw; ++col)
        if (r >= rh || col >= rw) wts[r * w + col] = v;
  }
  return wts;
}

double freq_loss(std::span<const double> pred, std::span<const double> ref, std::size_t h,
                 std::size_t w, std::size_t c, std::size_t levels) {
  if (pred.size() != ref.size() || pred.size() != h * w * c)
    throw DataError("freq_loss: shape mismatch");
  const auto wp = dwt2_packed(pred, h, w, c, levels);
  const auto wr = dwt2_packed(ref, h, w, c, levels);
  const auto wts = detail_weights(h, w, levels);
  double total = 0.0;
  for (std::size_t k = 0; k < c; ++k) {
    double ch = 0.0;
    for (std::size_t i = 0; i < h * w; ++i)
      ch += wts[i] * std::abs(wp[i * c + k] - wr[i * c + k]);
    total += ch;
  }
  return total / static_cast<double>(c);
}

}  // namespace sarl::wavelet
