#include "sba/basis.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace sba {

Fraction::Fraction(long n, long d) : num(n), den(d) {
  if (den <= 0 || num < 0) throw std::invalid_argument("fraction must be non-negative with positive denominator");
  const long g = std::gcd(num == 0 ? 1 : num, den);
  num /= g;
  den /= g;
}

Fraction Fraction::operator+(const Fraction& other) const {
  return Fraction(num * other.den + other.num * den, den * other.den);
}

std::string Fraction::str() const {
  std::ostringstream out;
  out << num << "/" << den;
  return out.str();
}

Fraction Fraction::parse(const std::string& text) {
  const auto slash = text.find('/');
  try {
    if (slash == std::string::npos) return Fraction(std::stol(text), 1);
    return Fraction(std::stol(text.substr(0, slash)), std::stol(text.substr(slash + 1)));
  } catch (const std::logic_error&) {
    throw std::invalid_argument("cannot parse fraction '" + text + "'");
  }
}

void BasisSpec::validate() const {
  if (!shape.valid()) throw std::invalid_argument("basis spec has invalid shape " + to_string(shape));
  if (kind == BasisKind::Pixel) return;
  if (initial_fraction.num <= 0 || initial_fraction.num > initial_fraction.den) {
    throw std::invalid_argument("dct initial fraction must lie in (0, 1]");
  }
  if (expansion_increment.num <= 0) {
    throw std::invalid_argument("dct expansion increment must be positive");
  }
  if (initial_fraction.floor_scale(shape.height) < 1 ||
      initial_fraction.floor_scale(shape.width) < 1) {
    throw std::invalid_argument("dct initial fraction " + initial_fraction.str() +
                                " truncates to an empty block on shape " + to_string(shape));
  }
}

long candidate_count(const BasisSpec& spec, const Fraction& fraction) {
  if (spec.kind == BasisKind::Pixel) return spec.shape.size();
  const long bh = std::min<long>(spec.shape.height, fraction.floor_scale(spec.shape.height));
  const long bw = std::min<long>(spec.shape.width, fraction.floor_scale(spec.shape.width));
  return static_cast<long>(spec.shape.channels) * bh * bw;
}

long candidate_count(const BasisSpec& spec) {
  return candidate_count(spec, spec.initial_fraction);
}

BasisSampler::BasisSampler(const BasisSpec& spec, std::uint64_t seed)
    : spec_(spec), rng_(seed), fraction_(spec.initial_fraction) {
  spec_.validate();
  const Shape& s = spec_.shape;
  if (spec_.kind == BasisKind::Pixel) {
    pool_.resize(s.size());
    std::iota(pool_.begin(), pool_.end(), std::int64_t{0});
    block_h_ = s.height;
    block_w_ = s.width;
    return;
  }
  block_h_ = 0;
  block_w_ = 0;
  admit_band(static_cast<int>(std::min<long>(s.height, fraction_.floor_scale(s.height))),
             static_cast<int>(std::min<long>(s.width, fraction_.floor_scale(s.width))));
}

void BasisSampler::admit_band(int new_block_h, int new_block_w) {
  // Newly admitted frequencies form the L-shaped band outside the old block;
  // consumed directions all lie inside it, so no duplicate can enter.
  const Shape& s = spec_.shape;
  for (int c = 0; c < s.channels; ++c) {
    for (int u = 0; u < new_block_h; ++u) {
      for (int v = 0; v < new_block_w; ++v) {
        if (u < block_h_ && v < block_w_) continue;
        pool_.push_back(s.flat_index(c, u, v));
      }
    }
  }
  block_h_ = new_block_h;
  block_w_ = new_block_w;
}

bool BasisSampler::expand() {
  const Shape& s = spec_.shape;
  while (block_h_ < s.height || block_w_ < s.width) {
    fraction_ = fraction_ + spec_.expansion_increment;
    const int nh = static_cast<int>(std::min<long>(s.height, fraction_.floor_scale(s.height)));
    const int nw = static_cast<int>(std::min<long>(s.width, fraction_.floor_scale(s.width)));
    if (nh == block_h_ && nw == block_w_) continue;
    admit_band(nh, nw);
    return true;
  }
  return false;
}

std::optional<BasisDirection> BasisSampler::next_direction() {
  if (pool_.empty()) {
    if (spec_.kind == BasisKind::Pixel || !expand()) return std::nullopt;
  }
  std::uniform_int_distribution<std::size_t> pick(0, pool_.size() - 1);
  const std::size_t j = pick(rng_);
  std::swap(pool_[j], pool_.back());
  const std::int64_t flat = pool_.back();
  pool_.pop_back();
  ++consumed_;

  const Shape& s = spec_.shape;
  BasisDirection d;
  d.kind = spec_.kind == BasisKind::Pixel ? DirectionKind::PixelAxis : DirectionKind::DctFrequency;
  d.channel = static_cast<int>(flat / (static_cast<long>(s.height) * s.width));
  const long rem = flat % (static_cast<long>(s.height) * s.width);
  d.a = static_cast<int>(rem / s.width);
  d.b = static_cast<int>(rem % s.width);
  return d;
}

}  // namespace sba
