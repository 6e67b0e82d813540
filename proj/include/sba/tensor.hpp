#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace sba {

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Image dimensions as a (channels, height, width) triple. Flat storage is
/// row-major: channel plane first, then row, then column.
struct Shape {
  int channels = 0;
  int height = 0;
  int width = 0;

  long size() const { return static_cast<long>(channels) * height * width; }
  bool valid() const { return channels > 0 && height > 0 && width > 0; }
  long flat_index(int c, int i, int j) const {
    return (static_cast<long>(c) * height + i) * width + j;
  }

  friend bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& shape);

/// Dense tensor over an image shape. In-memory math runs on double; float is
/// the precision of the file and wire formats.
template <typename Scalar>
struct TensorT {
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Shape shape;
  Vector data;

  TensorT() = default;
  explicit TensorT(const Shape& s) : shape(s), data(Vector::Zero(s.size())) {}
  TensorT(const Shape& s, Vector values) : shape(s), data(std::move(values)) {
    if (data.size() != shape.size()) {
      throw ShapeError("tensor data length does not match shape " + to_string(shape));
    }
  }

  Scalar& at(int c, int i, int j) { return data[shape.flat_index(c, i, j)]; }
  Scalar at(int c, int i, int j) const { return data[shape.flat_index(c, i, j)]; }
  bool all_finite() const { return data.allFinite(); }
};

using ImageTensor = TensorT<double>;

/// Rounds every entry through float precision. Oracle inputs are defined at
/// wire precision, so local and remote scoring see identical tensors.
ImageTensor quantize_to_wire(const ImageTensor& x);

enum class DirectionKind { PixelAxis, DctFrequency };

/// One orthonormal search direction, stored sparsely: either a single pixel
/// coordinate or a per-channel DCT frequency pair (u, v). As an implicit
/// dense vector of length c*h*w it has unit L2 norm.
struct BasisDirection {
  DirectionKind kind = DirectionKind::PixelAxis;
  int channel = 0;
  int a = 0;  ///< pixel row, or frequency u
  int b = 0;  ///< pixel column, or frequency v

  friend bool operator==(const BasisDirection&, const BasisDirection&) = default;
};

/// Throws std::out_of_range when the direction's indices do not fit the shape.
void check_direction(const BasisDirection& d, const Shape& shape);

/// Total order over directions of a bound shape, usable as a set key.
std::int64_t direction_key(const BasisDirection& d, const Shape& shape);

/// Dense unit vector of one basis element. PixelAxis yields a standard basis
/// vector; DctFrequency (u, v) on channel k fills that channel plane with
///   alpha(u) * alpha(v) * cos(pi*(2i+1)*u / (2h)) * cos(pi*(2j+1)*v / (2w)),
/// alpha(0) = sqrt(1/n) and alpha(m>0) = sqrt(2/n) for axis length n, and
/// leaves the other channels zero. Deterministic and side-effect free.
ImageTensor materialize(const BasisDirection& d, const Shape& shape);

struct Step {
  BasisDirection direction;
  double alpha = 0.0;
};

/// Running perturbation delta = sum of alpha_t * q_t over accepted steps.
/// Directions are orthonormal and never repeat, so with |alpha| = eps and no
/// clamping ||delta||^2 equals accepted_count * eps^2 exactly (up to float
/// accumulation). The dense delta is updated incrementally; resummed_delta()
/// recomputes it from the step list to detect drift.
class PerturbationAccumulator {
 public:
  PerturbationAccumulator() = default;
  explicit PerturbationAccumulator(const Shape& shape);

  /// Adds alpha * materialize(direction). A repeated direction is a sampler
  /// bug and throws std::logic_error.
  void apply_step(const BasisDirection& direction, double alpha);

  const Shape& shape() const { return shape_; }
  const Eigen::VectorXd& delta() const { return delta_; }
  const std::vector<Step>& steps() const { return steps_; }
  long accepted_count() const { return static_cast<long>(steps_.size()); }
  double norm() const { return delta_.norm(); }

  Eigen::VectorXd resummed_delta() const;

 private:
  Shape shape_;
  Eigen::VectorXd delta_;
  std::vector<Step> steps_;
  std::unordered_set<std::int64_t> used_;
};

/// x + delta, optionally clipped to the nominal [0, 1] pixel range. With
/// clamping the distance to x may be strictly less than ||delta||.
ImageTensor perturbed_image(const ImageTensor& x, const PerturbationAccumulator& acc,
                            bool clamp);

// --- tensor files ---------------------------------------------------------
//
// "SBT1": 4-byte magic, three little-endian uint32 (c, h, w), then c*h*w
// little-endian float32 values in row-major order. read_tensor() also
// accepts a plain CSV of floats with a one-line "c,h,w" header.

void write_sbt(const std::string& path, const ImageTensor& x);
void write_tensor_csv(const std::string& path, const ImageTensor& x);
ImageTensor read_tensor(const std::string& path);

}  // namespace sba
