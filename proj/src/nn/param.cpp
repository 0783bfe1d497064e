#include "csasr/nn/param.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>

#include "csasr/common.hpp"

namespace csasr::nn {

ParamRef ParamSet::add(std::string name, Eigen::Index rows, Eigen::Index cols) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
  const std::size_t i = values_.size();
  index_.emplace(name, i);
  names_.push_back(std::move(name));
  values_.push_back(Matrix::Zero(rows, cols));
  return ParamRef{i};
}

std::size_t ParamSet::find(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named '" + name + "'");
  return it->second;
}

std::size_t ParamSet::num_scalars() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += static_cast<std::size_t>(v.size());
  return n;
}

GradSet ParamSet::zero_grads() const { return GradSet(*this); }

void ParamSet::init_gaussian(double variance, std::uint64_t seed) {
  if (!(variance > 0.0)) throw std::invalid_argument("init variance must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, std::sqrt(variance));
  for (auto& v : values_) {
    for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = dist(rng);
  }
}

GradSet::GradSet(const ParamSet& params) {
  grads_.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    grads_.push_back(Matrix::Zero(params.value(i).rows(), params.value(i).cols()));
  }
}

void GradSet::set_zero() {
  for (auto& g : grads_) g.setZero();
}

void GradSet::add_scaled(const GradSet& other, double scale) {
  if (other.size() != size()) throw std::invalid_argument("GradSet size mismatch");
  for (std::size_t i = 0; i < grads_.size(); ++i) grads_[i] += scale * other.grads_[i];
}

void GradSet::scale(double factor) {
  for (auto& g : grads_) g *= factor;
}

double GradSet::squared_norm() const {
  double s = 0.0;
  for (const auto& g : grads_) s += g.squaredNorm();
  return s;
}

// ---------------------------------------------------------------------------
// Checkpoints. Layout (all little-endian):
//   magic "CSASRCKP", u32 version, u32 metadata count,
//   metadata: (u32 len, bytes) key, (u32 len, bytes) value,
//   u32 block count, blocks: (u32 len, bytes) name, u32 rows, u32 cols,
//   rows*cols float64 in column-major order.

namespace {

constexpr std::array<char, 8> kMagic{'C', 'S', 'A', 'S', 'R', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                              static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
  out.write(b.data(), 4);
}

void put_f64(std::ostream& out, double d) {
  const auto bits = std::bit_cast<std::uint64_t>(d);
  std::array<char, 8> b{};
  for (int i = 0; i < 8; ++i) b[static_cast<std::size_t>(i)] = static_cast<char>((bits >> (8 * i)) & 0xFF);
  out.write(b.data(), 8);
}

void put_str(std::ostream& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t get_u32(std::istream& in) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4)) throw DataError("checkpoint truncated");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

double get_f64(std::istream& in) {
  std::array<unsigned char, 8> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 8)) throw DataError("checkpoint truncated");
  std::uint64_t bits = 0;
  for (int i = 7; i >= 0; --i) bits = (bits << 8) | b[static_cast<std::size_t>(i)];
  return std::bit_cast<double>(bits);
}

std::string get_str(std::istream& in) {
  const auto n = get_u32(in);
  if (n > (1u << 24)) throw DataError("checkpoint string too long");
  std::string s(n, '\0');
  if (!in.read(s.data(), n)) throw DataError("checkpoint truncated");
  return s;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const std::map<std::string, std::string>& metadata,
                     const ParamSet& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(kMagic.data(), kMagic.size());
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(metadata.size()));
  for (const auto& [k, v] : metadata) {
    put_str(out, k);
    put_str(out, v);
  }
  put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& m = params.value(i);
    put_str(out, params.name(i));
    put_u32(out, static_cast<std::uint32_t>(m.rows()));
    put_u32(out, static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index j = 0; j < m.size(); ++j) put_f64(out, m.data()[j]);
  }
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read checkpoint " + path.string());
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) {
    throw DataError(path.string() + ": not a checkpoint file");
  }
  const auto version = get_u32(in);
  if (version != kVersion) throw DataError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  Checkpoint ckp;
  const auto n_meta = get_u32(in);
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    auto k = get_str(in);
    ckp.metadata[k] = get_str(in);
  }
  const auto n_blocks = get_u32(in);
  for (std::uint32_t i = 0; i < n_blocks; ++i) {
    auto name = get_str(in);
    const auto rows = get_u32(in);
    const auto cols = get_u32(in);
    auto ref = ckp.params.add(name, rows, cols);
    auto& m = ckp.params[ref];
    for (Eigen::Index j = 0; j < m.size(); ++j) m.data()[j] = get_f64(in);
  }
  return ckp;
}

void assign_params(ParamSet& target, const ParamSet& source) {
  for (std::size_t i = 0; i < target.size(); ++i) {
    const auto& src = source.value(source.find(target.name(i)));
    auto& dst = target.value(i);
    if (src.rows() != dst.rows() || src.cols() != dst.cols()) {
      throw DataError("shape mismatch for parameter '" + target.name(i) + "'");
    }
    dst = src;
  }
}

}  // namespace csasr::nn
