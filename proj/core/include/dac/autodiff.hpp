#pragma once

// Reverse-mode automatic differentiation over Eigen matrices. A Tape records
// the forward graph for one mini-batch; backward() walks it in reverse and
// accumulates gradients into the ParameterStore. Tapes are cheap and thrown
// away after each step; parameters persist across tapes.
//
// The op set is exactly what the models here need: affine maps, gathers for
// embedding lookups, segment max-pooling over event sets, gated-cell
// elementwise algebra, log-softmax and floored-log losses.

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace dac::ad {

using Mat = Eigen::MatrixXd;

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

struct Parameter {
    std::string name;
    Mat value;
    Mat grad;
    Mat adam_m;
    Mat adam_v;
};

class ParameterStore {
  public:
    int add(const std::string& name, int rows, int cols);
    int add(const std::string& name, const Mat& init);

    Parameter& at(int id) { return params_.at(id); }
    const Parameter& at(int id) const { return params_.at(id); }
    int size() const { return static_cast<int>(params_.size()); }
    int find(const std::string& name) const;  // -1 when absent

    void zero_grad();
    std::size_t parameter_count() const;

    // FNV-1a hash over the raw parameter bytes; used to assert frozen models
    // stay frozen.
    std::uint64_t value_hash() const;

  private:
    std::vector<Parameter> params_;
};

// Adam with bias correction. Optimizer state lives inside the parameters so
// checkpoints can carry it.
struct AdamOptimizer {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    long step_count = 0;

    void step(ParameterStore& store);
};

class Tape {
  public:
    // Leaves.
    Var constant(Mat value);
    Var parameter(ParameterStore& store, int param_id);

    // Affine algebra.
    Var matmul(Var a, Var b);
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var add_rowvec(Var a, Var row);  // broadcast a 1 x n bias over rows
    Var hadamard(Var a, Var b);
    Var scale(Var a, double s);
    Var mul_elem_const(Var a, const Mat& w);

    // Nonlinearities.
    Var sigmoid(Var a);
    Var tanh(Var a);
    Var exp(Var a);
    Var square(Var a);
    Var clamped_log(Var a, double floor);  // log(max(a, floor))

    // Structure ops.
    Var gather_rows(Var a, std::vector<int> rows);
    Var concat_cols(Var a, Var b);
    // Per-column max over the rows of each segment; segment ids must be in
    // [0, num_segments) and every segment must own at least one row.
    Var segment_max(Var a, std::vector<int> segment_of_row, int num_segments);

    // Rows as categorical distributions.
    Var log_softmax_rows(Var a);
    // out(r, 0) = a(r, cols[r]).
    Var select_per_row(Var a, std::vector<int> cols);
    Var rowwise_dot(Var a, Var b);

    // Reductions to 1 x 1.
    Var sum_all(Var a);
    Var weighted_sum_all(Var a, const Mat& weights);
    Var mean_all(Var a);

    const Mat& value(Var v) const { return nodes_.at(v.id).value; }
    double scalar(Var v) const;

    // Seeds d(out)/d(out) = 1, propagates through the graph, and accumulates
    // into every reachable ParameterStore entry. `out` must be 1 x 1.
    void backward(Var out);

    // Propagation only; parameter gradients stay on the tape. Used by the
    // sharded runner, which reduces them in deterministic shard order.
    void backward_local(Var out);

    // Calls visit(store, param_id, grad) for every parameter leaf whose
    // gradient is live after backward_local.
    void collect_param_grads(
        const std::function<void(ParameterStore&, int, const Mat&)>& visit);

    int node_count() const { return static_cast<int>(nodes_.size()); }

  private:
    struct Node {
        Mat value;
        Mat grad;
        bool needs_grad = false;
        bool grad_live = false;
        std::function<void(Tape&)> backprop;
    };

    struct ParamLeaf {
        ParameterStore* store;
        int param_id;
        int node_id;
    };

    int push(Mat value, bool needs_grad, std::function<void(Tape&)> backprop);
    Mat& grad(int id);
    bool live(int id) const { return nodes_[id].grad_live; }
    void check(Var v) const;

    std::vector<Node> nodes_;
    std::vector<ParamLeaf> param_leaves_;

    friend struct TapeAccess;
};

// One synchronized gradient pass over [0, count) split into fixed shards.
// `build` constructs the shard's (already normalized) scalar loss on a fresh
// tape; gradients are reduced into `store` in shard order, so the result is
// identical for any worker count. Returns the summed loss values.
double sharded_backward(ParameterStore& store, int count, int shard_size,
                        const std::function<Var(Tape&, int begin, int end)>& build,
                        int max_workers = 0);

}  // namespace dac::ad
