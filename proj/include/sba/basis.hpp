#pragma once

#include "sba/tensor.hpp"

#include <optional>
#include <random>
#include <string>
#include <vector>

namespace sba {

/// Exact rational in lowest terms. Frequency-block sizes are computed as
/// floor(fraction * axis), so the fraction must stay exact across expansions.
struct Fraction {
  long num = 0;
  long den = 1;

  Fraction() = default;
  Fraction(long n, long d);

  long floor_scale(long n) const { return n * num / den; }
  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  Fraction operator+(const Fraction& other) const;

  std::string str() const;
  static Fraction parse(const std::string& text);

  friend bool operator==(const Fraction&, const Fraction&) = default;
};

enum class BasisKind { Pixel, Dct };

/// The candidate set Q: the full pixel basis, or the low-frequency DCT block
/// that starts at initial_fraction of each axis and grows by
/// expansion_increment per axis whenever the current block is exhausted.
struct BasisSpec {
  BasisKind kind = BasisKind::Dct;
  Shape shape;
  Fraction initial_fraction{1, 8};
  Fraction expansion_increment{1, 32};

  /// Throws std::invalid_argument unless the shape is valid and, for Dct,
  /// the initial block is at least 1x1 and the increment is positive.
  void validate() const;
};

/// c * floor(r*h) * floor(r*w) for Dct (capped at the full plane), c*h*w for
/// Pixel where the fraction is ignored.
long candidate_count(const BasisSpec& spec, const Fraction& fraction);
long candidate_count(const BasisSpec& spec);

/// Draws directions uniformly at random without replacement from the current
/// candidate set. For Dct, exhausting the current block admits the next
/// L-shaped band of frequencies and sampling continues there; the sampler is
/// exhausted once every direction of the full set has been yielded.
///
/// Single-owner state for one attack run; distinct runs use distinct
/// samplers. Identical seeds yield identical sequences.
class BasisSampler {
 public:
  BasisSampler(const BasisSpec& spec, std::uint64_t seed);

  /// Next direction, or std::nullopt once the candidate set is exhausted.
  std::optional<BasisDirection> next_direction();

  const BasisSpec& spec() const { return spec_; }
  const Fraction& current_fraction() const { return fraction_; }
  long consumed() const { return consumed_; }

 private:
  void admit_band(int new_block_h, int new_block_w);
  bool expand();

  BasisSpec spec_;
  std::mt19937_64 rng_;
  std::vector<std::int64_t> pool_;  // Fisher-Yates: draw, swap to back, pop
  Fraction fraction_;
  int block_h_ = 0;
  int block_w_ = 0;
  long consumed_ = 0;
};

}  // namespace sba
