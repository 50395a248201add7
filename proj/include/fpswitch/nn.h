#ifndef FPSWITCH_NN_H_
#define FPSWITCH_NN_H_

#include <span>
#include <string>
#include <vector>

#include "fpswitch/rng.h"
#include "fpswitch/tensor_io.h"

namespace fpswitch {

// Fully connected network with tanh hidden layers and a linear output layer.
// Parameters live in one flat vector so optimizers and finite-difference
// checks can treat every model uniformly. Per layer the layout is the weight
// matrix (out x in, row-major) followed by the bias (out).
class Mlp {
 public:
  struct Tape {
    // activations[0] is the input; activations[k] the output of layer k.
    std::vector<std::vector<double>> activations;
  };

  Mlp() = default;
  explicit Mlp(std::vector<int> layer_sizes);  // all parameters zero

  // Scaled-uniform init (Glorot) for weights, zero biases. `output_scale`
  // shrinks the last layer so fresh policies start near uniform.
  void Initialize(Rng& rng, double output_scale = 1.0);

  int input_size() const { return sizes_.front(); }
  int output_size() const { return sizes_.back(); }
  const std::vector<int>& layer_sizes() const { return sizes_; }

  std::vector<double> Forward(std::span<const double> input) const;
  std::vector<double> Forward(std::span<const double> input, Tape& tape) const;

  // Accumulates dL/dparams into `grad_params` (same length as params()) and
  // returns dL/dinput.
  std::vector<double> Backward(const Tape& tape,
                               std::span<const double> grad_output,
                               std::span<double> grad_params) const;

  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }

  std::vector<NamedTensor> ToTensors(const std::string& prefix) const;
  void FromTensors(const std::vector<NamedTensor>& tensors,
                   const std::string& prefix);

  bool operator==(const Mlp& o) const {
    return sizes_ == o.sizes_ && params_ == o.params_;
  }

 private:
  size_t WeightOffset(int layer) const;

  std::vector<int> sizes_;
  std::vector<double> params_;
};

// Adam over a flat parameter span.
class Adam {
 public:
  explicit Adam(size_t n, double step_size, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8)
      : m_(n, 0.0), v_(n, 0.0), step_size_(step_size), beta1_(beta1),
        beta2_(beta2), eps_(eps) {}

  void Step(std::span<double> params, std::span<const double> grad);

 private:
  std::vector<double> m_, v_;
  double step_size_, beta1_, beta2_, eps_;
  long t_ = 0;
};

// Numerically stable softmax.
std::vector<double> Softmax(std::span<const double> logits);
// Rescales `grad` in place so its L2 norm is at most `max_norm`.
void ClipNorm(std::span<double> grad, double max_norm);
double Sigmoid(double x);

}  // namespace fpswitch

#endif  // FPSWITCH_NN_H_
