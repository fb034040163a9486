#include "sarl/fft.hpp"

#include <map>
#include <mutex>
#include <tuple>

#include <fftw3.h>

#include "sarl/errors.hpp"

namespace sarl::fft {
namespace {

// FFTW planning is not thread-safe; execution on new arrays is. Plans are
// created once per shape with FFTW_ESTIMATE | FFTW_UNALIGNED so the chosen
// algorithm never depends on timing or buffer alignment.
class PlanCache {
 public:
  ~PlanCache() {
    for (auto& [key, plan] : plans_) fftw_destroy_plan(plan);
  }

  fftw_plan get(std::size_t h, std::size_t w, std::size_t c, int sign) {
    std::lock_guard lock(mutex_);
    const auto key = std::make_tuple(h, w, c, sign);
    if (auto it = plans_.find(key); it != plans_.end()) return it->second;
    std::vector<cplx> scratch(h * w * c);
    auto* buf = reinterpret_cast<fftw_complex*>(scratch.data());
    const int n[2] = {static_cast<int>(h), static_cast<int>(w)};
    const int stride = static_cast<int>(c);
    fftw_plan plan = fftw_plan_many_dft(2, n, static_cast<int>(c), buf, nullptr, stride, 1, buf,
                                        nullptr, stride, 1, sign,
                                        FFTW_ESTIMATE | FFTW_UNALIGNED);
    if (plan == nullptr) throw NumericalError("FFTW failed to create a plan");
    plans_.emplace(key, plan);
    return plan;
  }

 private:
  std::mutex mutex_;
  std::map<std::tuple<std::size_t, std::size_t, std::size_t, int>, fftw_plan> plans_;
};

PlanCache& cache() {
  static PlanCache c;
  return c;
}

void run(std::span<cplx> data, std::size_t h, std::size_t w, std::size_t c, int sign) {
  if (data.size() != h * w * c) throw DataError("fft: buffer size does not match shape");
  if (data.empty()) return;
  auto* buf = reinterpret_cast<fftw_complex*>(data.data());
  fftw_execute_dft(cache().get(h, w, c, sign), buf, buf);
}

}  // namespace

void forward2(std::span<cplx> data, std::size_t h, std::size_t w, std::size_t c) {
  run(data, h, w, c, FFTW_FORWARD);
}

void inverse2(std::span<cplx> data, std::size_t h, std::size_t w, std::size_t c) {
  run(data, h, w, c, FFTW_BACKWARD);
  const double scale = 1.0 / static_cast<double>(h * w);
  for (auto& z : data) z *= scale;
}

std::vector<cplx> to_complex(std::span<const double> re) {
  std::vector<cplx> out(re.size());
  for (std::size_t i = 0; i < re.size(); ++i) out[i] = {re[i], 0.0};
  return out;
}

std::vector<cplx> to_complex(std::span<const double> re, std::span<const double> im) {
  if (re.size() != im.size()) throw DataError("to_complex: real/imaginary size mismatch");
  std::vector<cplx> out(re.size());
  for (std::size_t i = 0; i < re.size(); ++i) out[i] = {re[i], im[i]};
  return out;
}

std::vector<double> real_part(std::span<const cplx> z) {
  std::vector<double> out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i].real();
  return out;
}

std::vector<double> imag_part(std::span<const cplx> z) {
  std::vector<double> out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i].imag();
  return out;
}

}  // namespace sarl::fft
