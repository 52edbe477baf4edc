#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "p2c/random.hpp"
#include "p2c/tensor.hpp"

// Reverse-mode differentiation over whole matrices. A Tape records each
// operation's output together with a closure that pushes the output gradient
// back to its inputs. Parameter leaves reference the caller's arrays and
// accumulate into a caller-owned gradient set.
namespace p2c::ad {

using NodeId = std::size_t;

class Tape {
 public:
  /// `grads` may be null for inference; nothing is recorded for backward then.
  Tape(std::span<const Matrix> params, std::vector<Matrix>* grads);

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  NodeId param(std::size_t index);
  NodeId constant(Matrix value);
  NodeId push(Matrix value);
  void on_backward(NodeId id, std::function<void(Tape&)> fn);

  const Matrix& value(NodeId id) const;
  /// Gradient buffer of a node, allocated as zeros on first access.
  Matrix& grad(NodeId id);
  bool has_grad(NodeId id) const { return !nodes_[id].grad.empty(); }
  /// True when gradients must flow into this node (a parameter, or derived from one).
  bool requires_grad(NodeId id) const { return nodes_[id].needs_grad; }
  bool recording() const { return grads_ != nullptr; }
  std::size_t size() const { return nodes_.size(); }

  /// Seeds d(root)/d(root) = 1 for a 1x1 root and runs every closure in reverse.
  void backward(NodeId root);

 private:
  struct Node {
    Matrix own;
    const Matrix* ref = nullptr;
    Matrix grad;
    std::function<void(Tape&)> back;
    std::ptrdiff_t param_index = -1;
    bool needs_grad = false;

    const Matrix& value() const { return ref ? *ref : own; }
  };

  std::span<const Matrix> params_;
  std::vector<Matrix>* grads_;
  std::deque<Node> nodes_;
};

/// Row-wise softmax in place; masked entries get weight 0 and a fully masked
/// row becomes all zeros.
void masked_softmax(Matrix& scores, const MaskMatrix* mask);

/// Rows of `table` selected by ids, multiplied by `scale`.
NodeId embed(Tape& t, NodeId table, std::span<const std::int32_t> ids, double scale);
/// x * W + b, with b a 1 x cols row vector.
NodeId linear(Tape& t, NodeId x, NodeId w, NodeId b);
NodeId add(Tape& t, NodeId a, NodeId b);
/// Adds the first x.rows() rows of `c` to x; c receives no gradient.
NodeId add_constant(Tape& t, NodeId x, const Matrix& c);
NodeId relu(Tape& t, NodeId x);
NodeId layer_norm(Tape& t, NodeId x, NodeId gamma, NodeId beta, double eps = 1e-6);
/// Inverted dropout; identity when rate == 0.
NodeId dropout(Tape& t, NodeId x, double rate, Rng& rng);
/// Scaled dot-product attention over `heads` column blocks of q/k/v.
/// mask is q.rows() x k.rows(); true entries are excluded.
NodeId multi_head_attention(Tape& t, NodeId q, NodeId k, NodeId v, std::size_t heads, const MaskMatrix& mask);
/// Sum over rows with targets[r] != ignore of -log softmax(logits[r])[targets[r]],
/// divided by `normalizer`. Result is 1 x 1.
NodeId cross_entropy(Tape& t, NodeId logits, std::span<const std::int32_t> targets, double normalizer,
                     std::int32_t ignore);

}  // namespace p2c::ad
