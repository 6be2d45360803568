#pragma once

#include <functional>
#include <memory>
#include <vector>

#include <Eigen/Dense>

namespace musiscene::model {

/// Handle to one node of a Tape.
struct Var {
    int index = -1;
    bool valid() const { return index >= 0; }
};

using BoolMask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Reverse-mode autodiff over dense double matrices. A tape is built fresh
/// per forward pass and discarded afterwards; node order is already a
/// topological order, so backward() is a single reverse sweep.
///
/// Gradients flow only through nodes whose ancestors include a
/// requires-grad leaf; everything else is treated as constant.
class Tape {
public:
    Var leaf(Eigen::MatrixXd value, bool requires_grad = false);

    const Eigen::MatrixXd& value(Var v) const { return node(v).value; }
    /// Valid after backward(); zero matrix when the node was never reached.
    const Eigen::MatrixXd& grad(Var v) const;

    Var add(Var a, Var b);
    /// a + row broadcast over every row of a; row is 1 x cols(a).
    Var add_row(Var a, Var row);
    /// a + col broadcast over every column of a; col is rows(a) x 1.
    Var add_col(Var a, Var col);
    Var matmul(Var a, Var b);
    /// a * b^T without materializing a transpose node.
    Var matmul_nt(Var a, Var b);
    /// Entry-wise product with a 1x1 scalar node.
    Var scale(Var a, Var scalar);
    Var scale_const(Var a, double c);
    Var silu(Var a);
    /// Entry-wise exp; entries where mask is false become exact zeros.
    /// An empty mask means all entries participate.
    Var masked_exp(Var a, const BoolMask& mask = {});
    /// Row sums: [rows x cols] -> [rows x 1].
    Var row_sum(Var a);
    /// Entry-wise a / b; shapes must match.
    Var div(Var a, Var b);
    /// Each row of a multiplied by the matching entry of col (rows(a) x 1).
    Var scale_rows(Var a, Var col);
    /// Row-wise softmax; entries where mask is false become exact zeros.
    /// An empty mask means all entries participate.
    Var row_softmax(Var a, const BoolMask& mask = {});
    /// Per-row layer norm with affine parameters gamma/beta of shape 1 x cols.
    Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
    /// sum_l kernel(l) * layers[l]; kernel is [num_layers x 1].
    Var weighted_layer_sum(std::shared_ptr<const std::vector<Eigen::MatrixXd>> layers,
                           Var kernel);
    /// Mean cross-entropy from logits over rows with mask = 1, predicting
    /// targets[row]. Returns a 1x1 node.
    Var mean_masked_cross_entropy(Var logits, std::vector<int> targets,
                                  std::vector<uint8_t> mask);

    void backward(Var loss_node);

private:
    struct Node {
        Eigen::MatrixXd value;
        Eigen::MatrixXd grad;
        bool requires_grad = false;
        std::function<void(Tape&)> backprop;
    };

    Node& node(Var v);
    const Node& node(Var v) const;
    Var push(Eigen::MatrixXd value, bool requires_grad, std::function<void(Tape&)> backprop);
    void accumulate(int index, const Eigen::MatrixXd& g);
    bool needs(Var v) const { return node(v).requires_grad; }

    std::vector<Node> nodes_;
};

} // namespace musiscene::model
