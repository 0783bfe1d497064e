#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace csasr::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Handle to one tensor inside a ParamSet.
struct ParamRef {
  std::size_t index = static_cast<std::size_t>(-1);
};

class GradSet;

// Named, ordered collection of trainable matrices (vectors are n x 1).
class ParamSet {
 public:
  ParamRef add(std::string name, Eigen::Index rows, Eigen::Index cols);

  const Matrix& operator[](ParamRef ref) const { return values_[ref.index]; }
  Matrix& operator[](ParamRef ref) { return values_[ref.index]; }

  std::size_t size() const { return values_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  const Matrix& value(std::size_t i) const { return values_[i]; }
  Matrix& value(std::size_t i) { return values_[i]; }
  std::size_t find(const std::string& name) const;  // throws if absent
  std::size_t num_scalars() const;

  GradSet zero_grads() const;

  // Fills every entry i.i.d. from N(0, variance). Throws for variance <= 0.
  void init_gaussian(double variance, std::uint64_t seed);

 private:
  std::vector<std::string> names_;
  std::vector<Matrix> values_;
  std::map<std::string, std::size_t> index_;
};

// Gradient accumulators shaped like a ParamSet.
class GradSet {
 public:
  GradSet() = default;
  explicit GradSet(const ParamSet& params);

  Matrix& operator[](ParamRef ref) { return grads_[ref.index]; }
  const Matrix& operator[](ParamRef ref) const { return grads_[ref.index]; }
  Matrix& at(std::size_t i) { return grads_[i]; }
  const Matrix& at(std::size_t i) const { return grads_[i]; }
  std::size_t size() const { return grads_.size(); }

  void set_zero();
  void add_scaled(const GradSet& other, double scale);
  void scale(double factor);
  double squared_norm() const;

 private:
  std::vector<Matrix> grads_;
};

// Versioned binary checkpoint: metadata key/values plus named float64 blocks.
struct Checkpoint {
  std::map<std::string, std::string> metadata;
  ParamSet params;
};

void save_checkpoint(const std::filesystem::path& path, const std::map<std::string, std::string>& metadata,
                     const ParamSet& params);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Copies values from `source` into `target` by name; shapes must agree.
void assign_params(ParamSet& target, const ParamSet& source);

}  // namespace csasr::nn
