#include "sba/tensor.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

namespace sba {

std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << "(" << shape.channels << "," << shape.height << "," << shape.width << ")";
  return out.str();
}

ImageTensor quantize_to_wire(const ImageTensor& x) {
  ImageTensor out(x.shape);
  out.data = x.data.cast<float>().cast<double>();
  return out;
}

void check_direction(const BasisDirection& d, const Shape& shape) {
  if (!shape.valid()) throw ShapeError("invalid shape " + to_string(shape));
  if (d.channel < 0 || d.channel >= shape.channels || d.a < 0 || d.a >= shape.height ||
      d.b < 0 || d.b >= shape.width) {
    throw std::out_of_range("direction indices out of range for shape " + to_string(shape));
  }
}

std::int64_t direction_key(const BasisDirection& d, const Shape& shape) {
  std::int64_t flat = shape.flat_index(d.channel, d.a, d.b);
  return d.kind == DirectionKind::PixelAxis ? flat : flat + shape.size();
}

namespace {

// Orthonormal DCT-II atom for index m of frequency u on an axis of length n.
double dct_atom(int m, int u, int n) {
  const double alpha = u == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
  return alpha * std::cos(std::numbers::pi * (2.0 * m + 1.0) * u / (2.0 * n));
}

}  // namespace

ImageTensor materialize(const BasisDirection& d, const Shape& shape) {
  check_direction(d, shape);
  ImageTensor out(shape);
  if (d.kind == DirectionKind::PixelAxis) {
    out.data[shape.flat_index(d.channel, d.a, d.b)] = 1.0;
    return out;
  }
  for (int i = 0; i < shape.height; ++i) {
    const double row = dct_atom(i, d.a, shape.height);
    for (int j = 0; j < shape.width; ++j) {
      out.data[shape.flat_index(d.channel, i, j)] = row * dct_atom(j, d.b, shape.width);
    }
  }
  return out;
}

PerturbationAccumulator::PerturbationAccumulator(const Shape& shape)
    : shape_(shape), delta_(Eigen::VectorXd::Zero(shape.size())) {
  if (!shape.valid()) throw ShapeError("invalid shape " + to_string(shape));
}

void PerturbationAccumulator::apply_step(const BasisDirection& direction, double alpha) {
  check_direction(direction, shape_);
  if (!used_.insert(direction_key(direction, shape_)).second) {
    throw std::logic_error("direction applied twice; sampler must draw without replacement");
  }
  delta_ += alpha * materialize(direction, shape_).data;
  steps_.push_back({direction, alpha});
}

Eigen::VectorXd PerturbationAccumulator::resummed_delta() const {
  Eigen::VectorXd total = Eigen::VectorXd::Zero(shape_.size());
  for (const Step& step : steps_) {
    total += step.alpha * materialize(step.direction, shape_).data;
  }
  return total;
}

ImageTensor perturbed_image(const ImageTensor& x, const PerturbationAccumulator& acc,
                            bool clamp) {
  if (!(x.shape == acc.shape())) {
    throw ShapeError("image shape " + to_string(x.shape) + " does not match accumulator shape " +
                     to_string(acc.shape()));
  }
  ImageTensor out(x.shape);
  if (clamp) {
    out.data = (x.data + acc.delta()).cwiseMax(0.0).cwiseMin(1.0);
  } else {
    out.data = x.data + acc.delta();
  }
  return out;
}

namespace {

constexpr char kMagic[4] = {'S', 'B', 'T', '1'};

void put_u32le(std::ostream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                         static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(bytes, 4);
}

std::uint32_t get_u32le(std::istream& in) {
  unsigned char bytes[4];
  in.read(reinterpret_cast<char*>(bytes), 4);
  return static_cast<std::uint32_t>(bytes[0]) | (static_cast<std::uint32_t>(bytes[1]) << 8) |
         (static_cast<std::uint32_t>(bytes[2]) << 16) |
         (static_cast<std::uint32_t>(bytes[3]) << 24);
}

ImageTensor read_sbt_stream(std::istream& in, const std::string& path) {
  const std::uint32_t c = get_u32le(in);
  const std::uint32_t h = get_u32le(in);
  const std::uint32_t w = get_u32le(in);
  if (!in) throw ShapeError("truncated SBT1 header in " + path);
  const Shape shape{static_cast<int>(c), static_cast<int>(h), static_cast<int>(w)};
  if (!shape.valid()) throw ShapeError("invalid SBT1 shape in " + path);
  ImageTensor out(shape);
  for (long i = 0; i < shape.size(); ++i) {
    unsigned char bytes[4];
    in.read(reinterpret_cast<char*>(bytes), 4);
    if (!in) throw ShapeError("truncated SBT1 payload in " + path);
    std::uint32_t u = static_cast<std::uint32_t>(bytes[0]) |
                      (static_cast<std::uint32_t>(bytes[1]) << 8) |
                      (static_cast<std::uint32_t>(bytes[2]) << 16) |
                      (static_cast<std::uint32_t>(bytes[3]) << 24);
    float f;
    std::memcpy(&f, &u, 4);
    out.data[i] = static_cast<double>(f);
  }
  return out;
}

ImageTensor read_csv_stream(std::istream& in, const std::string& path) {
  std::string header;
  if (!std::getline(in, header)) throw ShapeError("empty tensor file " + path);
  Shape shape;
  char comma1 = 0, comma2 = 0;
  std::istringstream hs(header);
  if (!(hs >> shape.channels >> comma1 >> shape.height >> comma2 >> shape.width) ||
      comma1 != ',' || comma2 != ',' || !shape.valid()) {
    throw ShapeError("bad c,h,w header in " + path);
  }
  ImageTensor out(shape);
  long index = 0;
  std::string token;
  while (index < shape.size() && std::getline(in, token, ',')) {
    out.data[index++] = std::stod(token);
  }
  if (index != shape.size()) throw ShapeError("csv tensor too short in " + path);
  return out;
}

}  // namespace

void write_sbt(const std::string& path, const ImageTensor& x) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(kMagic, 4);
  put_u32le(out, static_cast<std::uint32_t>(x.shape.channels));
  put_u32le(out, static_cast<std::uint32_t>(x.shape.height));
  put_u32le(out, static_cast<std::uint32_t>(x.shape.width));
  for (long i = 0; i < x.shape.size(); ++i) {
    const float f = static_cast<float>(x.data[i]);
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    put_u32le(out, u);
  }
  if (!out) throw std::runtime_error("failed writing " + path);
}

void write_tensor_csv(const std::string& path, const ImageTensor& x) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << x.shape.channels << "," << x.shape.height << "," << x.shape.width << "\n";
  out.precision(17);
  for (long i = 0; i < x.shape.size(); ++i) {
    out << x.data[i] << (i + 1 < x.shape.size() ? "," : "\n");
  }
}

ImageTensor read_tensor(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  char magic[4] = {};
  in.read(magic, 4);
  if (in && std::memcmp(magic, kMagic, 4) == 0) return read_sbt_stream(in, path);
  in.clear();
  in.seekg(0);
  return read_csv_stream(in, path);
}

}  // namespace sba
