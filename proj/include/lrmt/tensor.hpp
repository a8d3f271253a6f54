#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <new>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace lrmt {

using Real = double;

/// Cache-line aligned allocation. SIMD kernels peel loop heads by address, so
/// a fixed base alignment keeps summation order, and results, reproducible.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using RealStorage = std::vector<Real, AlignedAllocator<Real>>;

/// Dense row-major array. Rank 0..2 is what the engine uses; higher ranks are
/// storable but every op treats them as [shape[0] x rest].
class Tensor {
public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, Real fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<Real> data);

  static Tensor matrix(std::size_t rows, std::size_t cols, Real fill = 0.0) {
    return Tensor({rows, cols}, fill);
  }
  static Tensor vector(std::size_t n, Real fill = 0.0) { return Tensor({n}, fill); }
  static Tensor vector(std::initializer_list<Real> values) {
    return Tensor({values.size()}, std::vector<Real>(values));
  }
  static Tensor scalar(Real v) { return Tensor({1}, std::vector<Real>{v}); }

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  /// Leading extent; 1 for a rank-0 tensor.
  std::size_t rows() const noexcept { return shape_.empty() ? 1 : shape_[0]; }
  /// Product of the trailing extents.
  std::size_t cols() const noexcept { return rows() == 0 ? 0 : data_.size() / rows(); }

  std::span<Real> data() noexcept { return data_; }
  std::span<const Real> data() const noexcept { return data_; }
  RealStorage& storage() noexcept { return data_; }
  const RealStorage& storage() const noexcept { return data_; }

  Real& operator[](std::size_t i) { return data_[i]; }
  Real operator[](std::size_t i) const { return data_[i]; }
  Real& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  Real operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<Real> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const Real> row(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }

  void fill(Real v);
  bool all_finite() const noexcept;
  bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }

  bool operator==(const Tensor& other) const = default;

private:
  std::vector<std::size_t> shape_;
  RealStorage data_;
};

std::string shape_string(const std::vector<std::size_t>& shape);

/// Deterministic generator with a serialisable state. Uniform draws are built
/// from raw 64-bit output so results do not depend on the standard library.
class Rng {
public:
  explicit Rng(std::uint64_t seed = 0x5eedULL) { reseed(seed); }

  void reseed(std::uint64_t seed);
  std::uint64_t next_u64();
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  bool bernoulli(double p) { return uniform() < p; }
  double normal();

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[below(i)]);
    }
  }

  std::string state() const;
  void set_state(const std::string& state);

  bool operator==(const Rng&) const = default;

private:
  std::uint64_t s_[4]{};
};

/// Stable 64-bit mix of a seed and a label; used to derive per-tensor seeds.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view label);

struct AdamState {
  Tensor m;
  Tensor v;
  std::int64_t t = 0;
};

/// A trainable tensor. `frozen_rows` (indexed by leading extent) marks rows
/// the optimizer must leave untouched, which is how pruned units are held at
/// zero while the rest of the tensor keeps training.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;
  bool frozen = false;
  std::vector<std::uint8_t> frozen_rows;

  Parameter() = default;
  Parameter(std::string n, Tensor v);

  bool updatable() const noexcept { return trainable && !frozen; }
  bool row_frozen(std::size_t r) const noexcept {
    return !frozen_rows.empty() && frozen_rows[r] != 0;
  }
  void freeze_row(std::size_t r);
  void zero_grad() { grad.fill(0.0); }
};

using ParameterRefs = std::vector<Parameter*>;

}  // namespace lrmt
