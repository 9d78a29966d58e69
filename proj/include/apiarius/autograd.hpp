#pragma once

#include <Eigen/Dense>
#include <array>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "apiarius/common.hpp"

namespace apiarius::ag {

/// Tensor shape of rank 0..4.
struct Shape {
  std::array<int, 4> dims{};
  int rank = 0;

  static Shape scalar() { return {}; }
  static Shape vec(int n) { return {{n, 0, 0, 0}, 1}; }
  static Shape mat(int n, int f) { return {{n, f, 0, 0}, 2}; }
  static Shape map(int n, int c, int h, int w) { return {{n, c, h, w}, 4}; }

  int operator[](int i) const { return dims[i]; }
  Eigen::Index size() const;
  std::string str() const;
  bool operator==(const Shape&) const = default;
};

/// Dense float64 tensor.
///
/// Storage is a column-major matrix whose layout depends on rank:
///   rank 0      1 x 1
///   rank 1 (F)  F x 1
///   rank 2 (N, F)        F x N, one column per sample
///   rank 4 (N, C, H, W)  C x (N*H*W), pixels ordered (n, h, w)
/// so a feature map's per-sample block is contiguous and flattening is a reshape.
struct Tensor {
  Shape shape;
  Eigen::MatrixXd data;

  Tensor() = default;
  Tensor(Shape s, Eigen::MatrixXd d);
  static Tensor zeros(Shape s);

  static Eigen::Index storage_rows(const Shape& s);
  static Eigen::Index storage_cols(const Shape& s);
};

/// A named learnable tensor with its gradient accumulator.
struct Parameter {
  std::string name;
  Tensor value;
  Eigen::MatrixXd grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v);
  void zero_grad() { grad.setZero(value.data.rows(), value.data.cols()); }
};

class Tape;

/// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Tensor& value() const;
  const Shape& shape() const;
  double item() const;
};

/// Records operations in execution order and replays them in reverse for gradients.
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Eigen::MatrixXd& grad_out)>;

  Var constant(Tensor t);
  /// Leaf whose gradient is kept on the tape (see grad()).
  Var variable(Tensor t);
  /// Leaf bound to a parameter; backward() adds into param.grad.
  Var param(Parameter& p);

  Var record(Tensor value, bool requires_grad, Backward backward);

  const Tensor& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  const Eigen::MatrixXd& grad(Var v) const { return nodes_[v.id].grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Adds `g` to the gradient of node `id` (no-op for constants).
  template <typename Expr>
  void accumulate(int id, const Expr& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  /// Reverse pass from a scalar output (seed 1).
  void backward(Var output);
  /// Reverse pass with an explicit output cotangent.
  void backward(Var output, const Eigen::MatrixXd& seed);

 private:
  struct Node {
    Tensor value;
    Eigen::MatrixXd grad;
    bool requires_grad = false;
    Backward backward;
    Parameter* param = nullptr;
  };
  std::vector<Node> nodes_;
};

// --- operators ------------------------------------------------------------------
// Convolution kernels are stored as Cout x (k*k*Cin) with column index (ky*k + kx)*Cin + ci.
// Transposed-convolution kernels are stored as (k*k*Cout) x Cin with row index
// (ky*k + kx)*Cout + co. Biases are Cout x 1.

Var conv2d(Var x, Var kernel, Var bias, int k = 3, int stride = 1, int pad = 1);
Var tconv2d(Var x, Var kernel, Var bias, int k, int stride, int pad = 1);
Var maxpool2(Var x);
Var dense(Var x, Var weight, Var bias);
Var flatten(Var x);
Var unflatten(Var x, int c, int h, int w);
Var reshape(Var x, Shape shape);

Var relu(Var x);
Var sigmoid(Var x);
Var exp(Var x);
Var clamp(Var x, double lo, double hi);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var x, double s);
Var sum(Var x);
Var mean(Var x);
Var slice_features(Var x, int start, int count);
Var concat_features(Var a, Var b);
/// Rows of an (N,F) tensor picked by sample index (repeats allowed); gradients scatter-add.
Var gather_samples(Var x, std::span<const int> index);

/// Mean pixelwise binary cross-entropy; recon clamped to [1e-7, 1 - 1e-7].
Var bce(Var recon, Var target);
/// KL(N(mu, e^logvar) || N(0, I)) summed over latent dims, averaged over the batch.
Var kl_diag_gauss(Var mu, Var logvar);
/// Mean softmax cross-entropy; logits K x N, one class index per sample.
Var softmax_ce(Var logits, std::span<const int> classes);
/// Mean Huber loss over all entries.
Var huber(Var pred, Var target, double delta);

inline constexpr double kBceClamp = 1e-7;

// --- optimizer ------------------------------------------------------------------

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  Eigen::MatrixXd m;
  Eigen::MatrixXd v;
  int64_t t = 0;
};

/// One bias-corrected Adam update of `p` from `p.grad`.
void adam_step(Parameter& p, AdamState& state, double lr, const AdamConfig& cfg = {});

/// Adam over a set of parameters with independent per-parameter state.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}
  void step(std::span<Parameter* const> params, double lr);
  const AdamState& state(const Parameter& p) const;

 private:
  AdamConfig cfg_;
  std::map<const Parameter*, AdamState> states_;
};

// --- gradient checking ----------------------------------------------------------

using ScalarFn = std::function<Var(Tape&, std::span<const Var>)>;

/// Max relative error |a - n| / max(1e-8, |a| + |n|) between backprop gradients and
/// central finite differences, over every input element.
double grad_check(const ScalarFn& fn, const std::vector<Tensor>& inputs, double h = 1e-5);

// --- checkpoints ----------------------------------------------------------------

inline constexpr uint8_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, std::span<const Parameter* const> params);
/// Loads values into existing parameters matched by name; shapes must agree.
void load_checkpoint(const std::filesystem::path& path, std::span<Parameter* const> params);
std::vector<Parameter> read_checkpoint(const std::filesystem::path& path);

/// He-normal initialisation for a weight tensor with the given fan-in.
void he_init(Parameter& p, int fan_in, Rng& rng);

}  // namespace apiarius::ag
