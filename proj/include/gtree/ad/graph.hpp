#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "gtree/ad/tensor.hpp"

namespace gtree::ad {

class Graph;

/// Handle to a value recorded on a Graph.
struct Var {
  Graph* graph = nullptr;
  int id = -1;

  const Tensor& value() const;
  bool valid() const { return graph != nullptr && id >= 0; }
};

/// Reverse-mode tape. Values are computed eagerly as operations are
/// recorded; `backward` walks the tape in reverse. A Graph is used by one
/// thread at a time; independent graphs may run concurrently.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, int self)>;

  Var constant(Tensor value);
  /// Leaf whose gradient is reported under `name` by parameter_grads().
  Var parameter(const std::string& name, const Tensor& value);

  /// Records a derived value. `backward` receives this node's id and must
  /// add into the input gradients via grad_ref().
  Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn backward);

  const Tensor& value(Var v) const;
  /// Gradient of the last backward() target with respect to v (zeros if unreached).
  const Tensor& grad(Var v) const;
  Tensor& grad_ref(int id);
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  const Tensor& value_of(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }

  /// Reverse accumulation from a scalar. Throws ContractError otherwise.
  void backward(Var loss);
  GradSet parameter_grads() const;

  std::size_t size() const { return nodes_.size(); }

  /// When enabled, piecewise operations hash which branch each element took.
  /// Two evaluations with equal signatures lie on the same smooth piece.
  void set_track_kinks(bool on) { track_kinks_ = on; }
  bool tracking_kinks() const { return track_kinks_; }
  void note_branch(std::uint64_t bits);
  std::uint64_t kink_signature() const { return kink_hash_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<int> inputs;
    BackwardFn backward;
    std::string param_name;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
  bool track_kinks_ = false;
  std::uint64_t kink_hash_ = 0xcbf29ce484222325ULL;
};

// ---- operations ---------------------------------------------------------

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);                      // entrywise
Var scale(Var a, double s);
Var add_const(Var a, const Tensor& c);      // a + c, same shape
Var mul_const(Var a, const Tensor& c);      // a * c entrywise, same shape
Var add_row(Var a, Var row);                // broadcast a 1 x m row over n x m
Var broadcast_rows(Var row, std::size_t n); // 1 x m -> n x m
Var matmul(Var a, Var b);

Var relu(Var a);
Var tanh(Var a);
Var exp(Var a);
Var log(Var a);
Var abs(Var a);
Var square(Var a);
Var sqrt(Var a);
Var clamp(Var a, double lo, double hi);

Var sum(Var a);       // -> scalar
Var mean(Var a);      // -> scalar
Var sum_rows(Var a);  // n x m -> 1 x m
Var mean_rows(Var a); // n x m -> 1 x m
Var sum_cols(Var a);  // n x m -> n x 1

/// Row r of the result is row idx[r] of `a`, or zeros when idx[r] < 0.
Var gather_rows(Var a, const std::vector<int>& idx);

enum class SegmentReduce { Sum, Mean, Max };
/// Reduces rows of `a` into `segments` rows by segment id. Empty segments give zeros.
Var segment_reduce(Var a, const std::vector<int>& segment_of_row, std::size_t segments, SegmentReduce kind);

Var concat_cols(const std::vector<Var>& parts);
Var softmax_rows(Var a);
Var log_softmax_rows(Var a);
Var cumsum_cols(Var a);

}  // namespace gtree::ad
