#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace sarl::fft {

using cplx = std::complex<double>;

// In-place 2-D DFT over the two leading axes of an H x W x C channels-last
// array; every channel is transformed independently. The forward transform
// is unnormalized, the inverse carries the 1/(HW) factor.
void forward2(std::span<cplx> data, std::size_t h, std::size_t w, std::size_t c);
void inverse2(std::span<cplx> data, std::size_t h, std::size_t w, std::size_t c);

std::vector<cplx> to_complex(std::span<const double> re);
std::vector<cplx> to_complex(std::span<const double> re, std::span<const double> im);
std::vector<double> real_part(std::span<const cplx> z);
std::vector<double> imag_part(std::span<const cplx> z);

}  // namespace sarl::fft
