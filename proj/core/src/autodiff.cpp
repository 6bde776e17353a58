#include "dac/autodiff.hpp"

#include "dac/parallel.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>
#include <utility>

namespace dac::ad {

int ParameterStore::add(const std::string& name, int rows, int cols) {
    return add(name, Mat::Zero(rows, cols));
}

int ParameterStore::add(const std::string& name, const Mat& init) {
    if (find(name) >= 0) throw std::invalid_argument("ParameterStore: duplicate name " + name);
    Parameter p;
    p.name = name;
    p.value = init;
    p.grad = Mat::Zero(init.rows(), init.cols());
    p.adam_m = Mat::Zero(init.rows(), init.cols());
    p.adam_v = Mat::Zero(init.rows(), init.cols());
    params_.push_back(std::move(p));
    return static_cast<int>(params_.size()) - 1;
}

int ParameterStore::find(const std::string& name) const {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (params_[i].name == name) return static_cast<int>(i);
    }
    return -1;
}

void ParameterStore::zero_grad() {
    for (Parameter& p : params_) p.grad.setZero();
}

std::size_t ParameterStore::parameter_count() const {
    std::size_t n = 0;
    for (const Parameter& p : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
}

std::uint64_t ParameterStore::value_hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](const void* data, std::size_t bytes) {
        const unsigned char* b = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < bytes; ++i) {
            h ^= b[i];
            h *= 1099511628211ULL;
        }
    };
    for (const Parameter& p : params_) {
        mix(p.name.data(), p.name.size());
        mix(p.value.data(), sizeof(double) * static_cast<std::size_t>(p.value.size()));
    }
    return h;
}

void AdamOptimizer::step(ParameterStore& store) {
    ++step_count;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
    for (int i = 0; i < store.size(); ++i) {
        Parameter& p = store.at(i);
        p.adam_m = beta1 * p.adam_m + (1.0 - beta1) * p.grad;
        p.adam_v = beta2 * p.adam_v.array().matrix() +
                   (1.0 - beta2) * p.grad.array().square().matrix();
        Mat m_hat = p.adam_m / bc1;
        Mat v_hat = p.adam_v / bc2;
        p.value.array() -= learning_rate * m_hat.array() / (v_hat.array().sqrt() + epsilon);
    }
}

int Tape::push(Mat value, bool needs_grad, std::function<void(Tape&)> backprop) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    n.backprop = std::move(backprop);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

Mat& Tape::grad(int id) {
    Node& n = nodes_[id];
    if (!n.grad_live) {
        n.grad = Mat::Zero(n.value.rows(), n.value.cols());
        n.grad_live = true;
    }
    return n.grad;
}

void Tape::check(Var v) const {
    if (!v.valid() || v.id >= static_cast<int>(nodes_.size())) {
        throw std::invalid_argument("Tape: variable does not belong to this tape");
    }
}

double Tape::scalar(Var v) const {
    check(v);
    const Mat& m = nodes_[v.id].value;
    if (m.rows() != 1 || m.cols() != 1) throw std::invalid_argument("Tape: not a scalar node");
    return m(0, 0);
}

Var Tape::constant(Mat value) { return {push(std::move(value), false, nullptr)}; }

Var Tape::parameter(ParameterStore& store, int param_id) {
    int id = push(store.at(param_id).value, true, nullptr);
    param_leaves_.push_back({&store, param_id, id});
    return {id};
}

Var Tape::matmul(Var a, Var b) {
    check(a);
    check(b);
    const Mat& A = nodes_[a.id].value;
    const Mat& B = nodes_[b.id].value;
    if (A.cols() != B.rows()) throw std::invalid_argument("matmul: shape mismatch");
    bool ng = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
    int id = push(A * B, ng, nullptr);
    if (ng) {
        nodes_[id].backprop = [id, a, b](Tape& t) {
            if (!t.live(id)) return;
            const Mat& g = t.nodes_[id].grad;
            if (t.nodes_[a.id].needs_grad) {
                t.grad(a.id).noalias() += g * t.nodes_[b.id].value.transpose();
            }
            if (t.nodes_[b.id].needs_grad) {
                t.grad(b.id).noalias() += t.nodes_[a.id].value.transpose() * g;
            }
        };
    }
    return {id};
}

Var Tape::add(Var a, Var b) {
    check(a);
    check(b);
    const Mat& A = nodes_[a.id].value;
    const Mat& B = nodes_[b.id].value;
    if (A.rows() != B.rows() || A.cols() != B.cols()) {
        throw std::invalid_argument("add: shape mismatch");
    }
    bool ng = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
    int id = push(A + B, ng, nullptr);
    if (ng) {
        nodes_[id].backprop = [id, a, b](Tape& t) {
            if (!t.live(id)) return;
            const Mat& g = t.nodes_[id].grad;
            if (t.nodes_[a.id].needs_grad) t.grad(a.id) += g;
            if (t.nodes_[b.id].needs_grad) t.grad(b.id) += g;
        };
    }
    return {id};
}

Var Tape::sub(Var a, Var b) {
    check(a);
    check(b);
    const Mat& A = nodes_[a.id].value;
    const Mat& B = nodes_[b.id].value;
    if (A.rows() != B.rows() || A.cols() != B.cols()) {
        throw std::invalid_argument("sub: shape mismatch");
    }
    bool ng = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
    int id = push(A - B, ng, nullptr);
    if (ng) {
        nodes_[id].backprop = [id, a, b](Tape& t) {
            if (!t.live(id)) return;
            const Mat& g = t.nodes_[id].grad;
            if (t.nodes_[a.id].needs_grad) t.grad(a.id) += g;
            if (t.nodes_[b.id].needs_grad) t.grad(b.id) -= g;
        };
    }
    return {id};
}

Var Tape::add_rowvec(Var a, Var row) {
    check(a);
    check(row);
    const Mat& A = nodes_[a.id].value;
    const Mat& R = nodes_[row.id].value;
    if (R.rows() != 1 || R.cols() != A.cols()) {
        throw std::invalid_argument("add_rowvec: bias must be 1 x cols(a)");
    }
    bool ng = nodes_[a.id].needs_grad || nodes_[row.id].needs_grad;
    Mat out = A;
    out.rowwise() += R.row(0);
    int id = push(std::move(out), ng, nullptr);
    if (ng) {
        nodes_[id].backprop = [id, a, row](Tape& t) {
            if (!t.live(id)) return;
            const Mat& g = t.nodes_[id].grad;
            if (t.nodes_[a.id].needs_grad) t.grad(a.id) += g;
            if (t.nodes_[row.id].needs_grad) t.grad(row.id) += g.colwise().sum();
        };
    }
    return {id};
}

Var Tape::hadamard(Var a, Var b) {
    check(a);
    check(b);
    const Mat& A = nodes_[a.id].value;
    const Mat& B = nodes_[b.id].value;
    if (A.rows() != B.rows() || A.cols() != B.cols()) {
        throw std::invalid_argument("hadamard: shape mismatch");
    }
    bool ng = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
    int id = push((A.array() * B.array()).matrix(), ng, nullptr);
    if (ng) {
        nodes_[id].backprop = [id, a, b](Tape& t) {
            if (!t.live(id)) return;
            const Mat& g = t.nodes_[id].grad;
            if (t.nodes_[a.id].needs_grad) {
                t.grad(a.id).array() += g.array() * t.nodes_[b.id].value.array();
            }
            if (t.nodes_[b.id].needs_grad) {
                t.grad(b.id).array() += g.array() * t.nodes_[a.id].value.array();
            }
        };
    }
    return {id};
}

Var Tape::scale(Var a, double s) {
    check(a);
    bool ng = nodes_[a.id].needs_grad;
    int id = push(nodes_[a.id].value * s, ng, nullptr);
    if (ng) {
        nodes_[id].backprop = [id, a, s](Tape& t) {
            if (t.live(id)) t.grad(a.id) += t.nodes_[id].grad * s;
        };
    }
    return {id};
}

Var Tape::mul_elem_const(Var a, const Mat& w) {
    check(a);
    const Mat& A = nodes_[a.id].value;
    if (A.rows() != w.rows() || A.cols() != w.cols()) {
        throw std::invalid_argument("mul_elem_const: shape mismatch");
    }
    bool ng = nodes_[a.id].needs_grad;
    int id = push((A.array() * w.array()).matrix(), ng, nullptr);
    if (ng) {
        nodes_[id].backprop = [id, a, w](Tape& t) {
            if (t.live(id)) t.grad(a.id).array() += t.nodes_[id].grad.array() * w.array();
        };
    }
    return {id};
}

Var Tape::sigmoid(Var a) {
    check(a);
    bool ng = nodes_[a.id].needs_grad;
    Mat out = (1.0 / (1.0 + (-nodes_[a.id].value.array()).exp())).matrix();
    int id = push(std::move(out), ng, nullptr);
    if (ng) {
        nodes_[id].backprop = [id, a](Tape& t) {
            if (!t.live(id)) return;
            const auto& y = t.nodes_[id].value.array();
            t.grad(a.id).array() += t.nodes_[id].grad.array() * y * (1.0 - y);
        };
    }
    return {id};
}

Var Tape::tanh(Var a) {
    check(a);
    bool ng = nodes_[a.id].needs_grad;
    int id = push(nodes_[a.id].value.array().tanh().matrix(), ng, nullptr);
    if (ng) {
        nodes_[id].backprop = [id, a](Tape& t) {
            if (!t.live(id)) return;
            const auto& y = t.nodes_[id].value.array();
            t.grad(a.id).array() += t.nodes_[id].grad.array() * (1.0 - y * y);
        };
    }
    return {id};
}

Var Tape::exp(Var a) {
    check(a);
    bool ng = nodes_[a.id].needs_grad;
    int id = push(nodes_[a.id].value.array().exp().matrix(), ng, nullptr);
    if (ng) {
        nodes_[id].backprop = [id, a](Tape& t) {
            if (!t.live(id)) return;
            t.grad(a.id).array() += t.nodes_[id].grad.array() * t.nodes_[id].value.array();
        };
    }
    return {id};
}

Var Tape::square(Var a) {
    check(a);
    bool ng = nodes_[a.id].needs_grad;
    int id = push(nodes_[a.id].value.array().square().matrix(), ng, nullptr);
    if (ng) {
        nodes_[id].backprop = [id, a](Tape& t) {
            if (!t.live(id)) return;
            t.grad(a.id).array() +=
                2.0 * t.nodes_[id].grad.array() * t.nodes_[a.id].value.array();
        };
    }
    return {id};
}

Var Tape::clamped_log(Var a, double floor) {
    check(a);
    if (floor <= 0.0) throw std::invalid_argument("clamped_log: floor must be positive");
    bool ng = nodes_[a.id].needs_grad;
    Mat out = nodes_[a.id].value.array().max(floor).log().matrix();
    int id = push(std::move(out), ng, nullptr);
    if (ng) {
        nodes_[id].backprop = [id, a, floor](Tape& t) {
            if (!t.live(id)) return;
            const auto& x = t.nodes_[a.id].value.array();
            // Zero slope below the floor.
            t.grad(a.id).array() +=
                t.nodes_[id].grad.array() * (x > floor).cast<double>() / x.max(floor);
        };
    }
    return {id};
}

Var Tape::gather_rows(Var a, std::vector<int> rows) {
    check(a);
    const Mat& A = nodes_[a.id].value;
    Mat out(static_cast<int>(rows.size()), A.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r] < 0 || rows[r] >= A.rows()) {
            throw std::invalid_argument("gather_rows: index out of range");
        }
        out.row(static_cast<int>(r)) = A.row(rows[r]);
    }
    bool ng = nodes_[a.id].needs_grad;
    int id = push(std::move(out), ng, nullptr);
    if (ng) {
        nodes_[id].backprop = [id, a, rows = std::move(rows)](Tape& t) {
            if (!t.live(id)) return;
            const Mat& g = t.nodes_[id].grad;
            Mat& ga = t.grad(a.id);
            for (std::size_t r = 0; r < rows.size(); ++r) {
                ga.row(rows[r]) += g.row(static_cast<int>(r));
            }
        };
    }
    return {id};
}

Var Tape::concat_cols(Var a, Var b) {
    check(a);
    check(b);
    const Mat& A = nodes_[a.id].value;
    const Mat& B = nodes_[b.id].value;
    if (A.rows() != B.rows()) throw std::invalid_argument("concat_cols: row mismatch");
    Mat out(A.rows(), A.cols() + B.cols());
    out << A, B;
    const int ac = static_cast<int>(A.cols());
    const int bc = static_cast<int>(B.cols());
    bool ng = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
    int id = push(std::move(out), ng, nullptr);
    if (ng) {
        nodes_[id].backprop = [id, a, b, ac, bc](Tape& t) {
            if (!t.live(id)) return;
            const Mat& g = t.nodes_[id].grad;
            if (t.nodes_[a.id].needs_grad) t.grad(a.id) += g.leftCols(ac);
            if (t.nodes_[b.id].needs_grad) t.grad(b.id) += g.rightCols(bc);
        };
    }
    return {id};
}

Var Tape::segment_max(Var a, std::vector<int> segment_of_row, int num_segments) {
    check(a);
    const Mat& A = nodes_[a.id].value;
    if (static_cast<int>(segment_of_row.size()) != A.rows()) {
        throw std::invalid_argument("segment_max: one segment id per row required");
    }
    if (num_segments < 1) throw std::invalid_argument("segment_max: empty output");
    Mat out(num_segments, A.cols());
    Eigen::MatrixXi argmax(num_segments, A.cols());
    std::vector<bool> seen(static_cast<std::size_t>(num_segments), false);
    for (int r = 0; r < A.rows(); ++r) {
        int s = segment_of_row[static_cast<std::size_t>(r)];
        if (s < 0 || s >= num_segments) throw std::invalid_argument("segment_max: bad segment id");
        if (!seen[static_cast<std::size_t>(s)]) {
            out.row(s) = A.row(r);
            argmax.row(s).setConstant(r);
            seen[static_cast<std::size_t>(s)] = true;
        } else {
            for (int c = 0; c < A.cols(); ++c) {
                if (A(r, c) > out(s, c)) {
                    out(s, c) = A(r, c);
                    argmax(s, c) = r;
                }
            }
        }
    }
    for (bool s : seen) {
        if (!s) throw std::invalid_argument("segment_max: segment with no rows");
    }
    bool ng = nodes_[a.id].needs_grad;
    int id = push(std::move(out), ng, nullptr);
    if (ng) {
        nodes_[id].backprop = [id, a, argmax = std::move(argmax)](Tape& t) {
            if (!t.live(id)) return;
            const Mat& g = t.nodes_[id].grad;
            Mat& ga = t.grad(a.id);
            for (int s = 0; s < g.rows(); ++s) {
                for (int c = 0; c < g.cols(); ++c) ga(argmax(s, c), c) += g(s, c);
            }
        };
    }
    return {id};
}

Var Tape::log_softmax_rows(Var a) {
    check(a);
    const Mat& A = nodes_[a.id].value;
    Mat out(A.rows(), A.cols());
    for (int r = 0; r < A.rows(); ++r) {
        double mx = A.row(r).maxCoeff();
        double lse = std::log((A.row(r).array() - mx).exp().sum()) + mx;
        out.row(r) = A.row(r).array() - lse;
    }
    bool ng = nodes_[a.id].needs_grad;
    int id = push(std::move(out), ng, nullptr);
    if (ng) {
        nodes_[id].backprop = [id, a](Tape& t) {
            if (!t.live(id)) return;
            const Mat& g = t.nodes_[id].grad;
            const Mat& y = t.nodes_[id].value;
            Mat& ga = t.grad(a.id);
            for (int r = 0; r < g.rows(); ++r) {
                double gsum = g.row(r).sum();
                ga.row(r).array() += g.row(r).array() - y.row(r).array().exp() * gsum;
            }
        };
    }
    return {id};
}

Var Tape::select_per_row(Var a, std::vector<int> cols) {
    check(a);
    const Mat& A = nodes_[a.id].value;
    if (static_cast<int>(cols.size()) != A.rows()) {
        throw std::invalid_argument("select_per_row: one column per row required");
    }
    Mat out(A.rows(), 1);
    for (int r = 0; r < A.rows(); ++r) {
        int c = cols[static_cast<std::size_t>(r)];
        if (c < 0 || c >= A.cols()) throw std::invalid_argument("select_per_row: bad column");
        out(r, 0) = A(r, c);
    }
    bool ng = nodes_[a.id].needs_grad;
    int id = push(std::move(out), ng, nullptr);
    if (ng) {
        nodes_[id].backprop = [id, a, cols = std::move(cols)](Tape& t) {
            if (!t.live(id)) return;
            const Mat& g = t.nodes_[id].grad;
            Mat& ga = t.grad(a.id);
            for (int r = 0; r < g.rows(); ++r) ga(r, cols[static_cast<std::size_t>(r)]) += g(r, 0);
        };
    }
    return {id};
}

Var Tape::rowwise_dot(Var a, Var b) {
    check(a);
    check(b);
    const Mat& A = nodes_[a.id].value;
    const Mat& B = nodes_[b.id].value;
    if (A.rows() != B.rows() || A.cols() != B.cols()) {
        throw std::invalid_argument("rowwise_dot: shape mismatch");
    }
    Mat out = (A.array() * B.array()).rowwise().sum().matrix();
    bool ng = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
    int id = push(std::move(out), ng, nullptr);
    if (ng) {
        nodes_[id].backprop = [id, a, b](Tape& t) {
            if (!t.live(id)) return;
            const Mat& g = t.nodes_[id].grad;  // n x 1
            if (t.nodes_[a.id].needs_grad) {
                t.grad(a.id).array() +=
                    t.nodes_[b.id].value.array().colwise() * g.col(0).array();
            }
            if (t.nodes_[b.id].needs_grad) {
                t.grad(b.id).array() +=
                    t.nodes_[a.id].value.array().colwise() * g.col(0).array();
            }
        };
    }
    return {id};
}

Var Tape::sum_all(Var a) {
    check(a);
    bool ng = nodes_[a.id].needs_grad;
    Mat out(1, 1);
    out(0, 0) = nodes_[a.id].value.sum();
    int id = push(std::move(out), ng, nullptr);
    if (ng) {
        nodes_[id].backprop = [id, a](Tape& t) {
            if (t.live(id)) t.grad(a.id).array() += t.nodes_[id].grad(0, 0);
        };
    }
    return {id};
}

Var Tape::weighted_sum_all(Var a, const Mat& weights) {
    check(a);
    const Mat& A = nodes_[a.id].value;
    if (A.rows() != weights.rows() || A.cols() != weights.cols()) {
        throw std::invalid_argument("weighted_sum_all: shape mismatch");
    }
    Mat out(1, 1);
    out(0, 0) = (A.array() * weights.array()).sum();
    bool ng = nodes_[a.id].needs_grad;
    int id = push(std::move(out), ng, nullptr);
    if (ng) {
        nodes_[id].backprop = [id, a, weights](Tape& t) {
            if (t.live(id)) t.grad(a.id) += t.nodes_[id].grad(0, 0) * weights;
        };
    }
    return {id};
}

Var Tape::mean_all(Var a) {
    check(a);
    const double n = static_cast<double>(nodes_[a.id].value.size());
    return scale(sum_all(a), 1.0 / n);
}

void Tape::backward_local(Var out) {
    check(out);
    Node& o = nodes_[out.id];
    if (o.value.rows() != 1 || o.value.cols() != 1) {
        throw std::invalid_argument("backward: output must be scalar");
    }
    grad(out.id)(0, 0) += 1.0;
    for (int i = out.id; i >= 0; --i) {
        Node& n = nodes_[static_cast<std::size_t>(i)];
        if (n.needs_grad && n.grad_live && n.backprop) n.backprop(*this);
    }
}

void Tape::collect_param_grads(
    const std::function<void(ParameterStore&, int, const Mat&)>& visit) {
    for (const ParamLeaf& leaf : param_leaves_) {
        if (nodes_[static_cast<std::size_t>(leaf.node_id)].grad_live) {
            visit(*leaf.store, leaf.param_id,
                  nodes_[static_cast<std::size_t>(leaf.node_id)].grad);
        }
    }
}

void Tape::backward(Var out) {
    backward_local(out);
    collect_param_grads(
        [](ParameterStore& store, int pid, const Mat& g) { store.at(pid).grad += g; });
}

double sharded_backward(ParameterStore& store, int count, int shard_size,
                        const std::function<Var(Tape&, int begin, int end)>& build,
                        int max_workers) {
    if (count <= 0) return 0.0;
    shard_size = std::max(1, shard_size);
    const int shards = (count + shard_size - 1) / shard_size;

    struct ShardResult {
        double value = 0.0;
        std::vector<std::pair<int, Mat>> grads;
    };
    std::vector<ShardResult> results(static_cast<std::size_t>(shards));

    parallel_shards(
        count, shard_size,
        [&](int begin, int end) {
            const int s = begin / shard_size;
            Tape tape;
            Var loss = build(tape, begin, end);
            results[static_cast<std::size_t>(s)].value = tape.scalar(loss);
            tape.backward_local(loss);
            tape.collect_param_grads([&](ParameterStore& owner, int pid, const Mat& g) {
                if (&owner != &store) {
                    throw std::logic_error("sharded_backward: foreign parameter store");
                }
                results[static_cast<std::size_t>(s)].grads.emplace_back(pid, g);
            });
        },
        max_workers);

    double total = 0.0;
    for (const ShardResult& r : results) {
        total += r.value;
        for (const auto& [pid, g] : r.grads) store.at(pid).grad += g;
    }
    return total;
}

}  // namespace dac::ad
