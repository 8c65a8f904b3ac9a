// Copyright 2026 The PSE Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "pse/fft.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cstring>
#include <mutex>

#include "pse/error.hpp"

namespace pse {
namespace {

// The FFTW planner is not thread-safe.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

template <typename T>
struct FftwApi;

template <>
struct FftwApi<double> {
  using Plan = fftw_plan;
  using Complex = fftw_complex;
  static void* malloc(std::size_t n) { return fftw_malloc(n); }
  static void free(void* p) { fftw_free(p); }
  static Plan r2c(int n, double* in, Complex* out) {
    return fftw_plan_dft_r2c_1d(n, in, out, FFTW_ESTIMATE);
  }
  static Plan c2r(int n, Complex* in, double* out) {
    return fftw_plan_dft_c2r_1d(n, in, out, FFTW_ESTIMATE);
  }
  static void execute(Plan p) { fftw_execute(p); }
  static void destroy(Plan p) { fftw_destroy_plan(p); }
};

template <>
struct FftwApi<float> {
  using Plan = fftwf_plan;
  using Complex = fftwf_complex;
  static void* malloc(std::size_t n) { return fftwf_malloc(n); }
  static void free(void* p) { fftwf_free(p); }
  static Plan r2c(int n, float* in, Complex* out) {
    return fftwf_plan_dft_r2c_1d(n, in, out, FFTW_ESTIMATE);
  }
  static Plan c2r(int n, Complex* in, float* out) {
    return fftwf_plan_dft_c2r_1d(n, in, out, FFTW_ESTIMATE);
  }
  static void execute(Plan p) { fftwf_execute(p); }
  static void destroy(Plan p) { fftwf_destroy_plan(p); }
};

}  // namespace

template <typename T>
struct RealFft<T>::Impl {
  using Api = FftwApi<T>;
  T* real = nullptr;
  typename Api::Complex* spec = nullptr;
  typename Api::Plan fwd{};
  typename Api::Plan inv{};

  explicit Impl(std::size_t n) {
    real = static_cast<T*>(Api::malloc(sizeof(T) * n));
    spec = static_cast<typename Api::Complex*>(
        Api::malloc(sizeof(typename Api::Complex) * (n / 2 + 1)));
    std::lock_guard<std::mutex> lock(planner_mutex());
    fwd = Api::r2c(static_cast<int>(n), real, spec);
    inv = Api::c2r(static_cast<int>(n), spec, real);
  }
  ~Impl() {
    {
      std::lock_guard<std::mutex> lock(planner_mutex());
      Api::destroy(fwd);
      Api::destroy(inv);
    }
    Api::free(real);
    Api::free(spec);
  }
};

template <typename T>
RealFft<T>::RealFft(std::size_t n) : n_(n) {
  if (n < 2 || n % 2 != 0) {
    throw ConfigError("FFT size must be even and >= 2, got " +
                      std::to_string(n));
  }
  impl_ = std::make_unique<Impl>(n);
}

template <typename T>
RealFft<T>::~RealFft() = default;
template <typename T>
RealFft<T>::RealFft(RealFft&&) noexcept = default;
template <typename T>
RealFft<T>& RealFft<T>::operator=(RealFft&&) noexcept = default;

template <typename T>
void RealFft<T>::forward(std::span<const T> in,
                         std::span<std::complex<T>> out) {
  std::copy(in.begin(), in.begin() + n_, impl_->real);
  Impl::Api::execute(impl_->fwd);
  std::memcpy(static_cast<void*>(out.data()), impl_->spec,
              sizeof(std::complex<T>) * bins());
}

template <typename T>
void RealFft<T>::inverse(std::span<const std::complex<T>> in,
                         std::span<T> out) {
  std::memcpy(impl_->spec, static_cast<const void*>(in.data()),
              sizeof(std::complex<T>) * bins());
  Impl::Api::execute(impl_->inv);
  const T scale = T(1) / static_cast<T>(n_);
  for (std::size_t i = 0; i < n_; ++i) out[i] = impl_->real[i] * scale;
}

template class RealFft<float>;
template class RealFft<double>;

}  // namespace pse
