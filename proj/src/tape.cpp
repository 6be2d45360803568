#include "musiscene/tape.hpp"

#include <cmath>
#include <limits>
#include <utility>

#include "musiscene/error.hpp"

namespace musiscene::model {

namespace {

Eigen::MatrixXd row_softmax_value(const Eigen::MatrixXd& a, const BoolMask& mask) {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(a.rows(), a.cols());
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index c = 0; c < a.cols(); ++c) {
            if (mask.size() != 0 && !mask(r, c)) continue;
            mx = std::max(mx, a(r, c));
        }
        require(std::isfinite(mx), "softmax row has no unmasked entries");
        double denom = 0.0;
        for (Eigen::Index c = 0; c < a.cols(); ++c) {
            if (mask.size() != 0 && !mask(r, c)) continue;
            const double e = std::exp(a(r, c) - mx);
            out(r, c) = e;
            denom += e;
        }
        for (Eigen::Index c = 0; c < a.cols(); ++c) out(r, c) /= denom;
    }
    return out;
}

Eigen::MatrixXd stable_row_softmax(const Eigen::RowVectorXd& row) {
    const double mx = row.maxCoeff();
    Eigen::RowVectorXd e = (row.array() - mx).exp();
    return e / e.sum();
}

} // namespace

Tape::Node& Tape::node(Var v) {
    require(v.index >= 0 && v.index < static_cast<int>(nodes_.size()), "invalid tape node handle");
    return nodes_[static_cast<size_t>(v.index)];
}

const Tape::Node& Tape::node(Var v) const {
    require(v.index >= 0 && v.index < static_cast<int>(nodes_.size()), "invalid tape node handle");
    return nodes_[static_cast<size_t>(v.index)];
}

Var Tape::push(Eigen::MatrixXd value, bool requires_grad, std::function<void(Tape&)> backprop) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.backprop = std::move(backprop);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

void Tape::accumulate(int index, const Eigen::MatrixXd& g) {
    Node& n = nodes_[static_cast<size_t>(index)];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) n.grad = Eigen::MatrixXd::Zero(n.value.rows(), n.value.cols());
    n.grad += g;
}

const Eigen::MatrixXd& Tape::grad(Var v) const {
    const Node& n = node(v);
    require(n.requires_grad, "gradient requested for a node that does not track gradients");
    require(n.grad.size() != 0, "gradient requested before backward()");
    return n.grad;
}

Var Tape::leaf(Eigen::MatrixXd value, bool requires_grad) {
    return push(std::move(value), requires_grad, nullptr);
}

Var Tape::add(Var a, Var b) {
    const Node& na = node(a);
    const Node& nb = node(b);
    require(na.value.rows() == nb.value.rows() && na.value.cols() == nb.value.cols(),
            "add: shape mismatch");
    const int ia = a.index, ib = b.index;
    const int out = static_cast<int>(nodes_.size());
    return push(na.value + nb.value, na.requires_grad || nb.requires_grad, [ia, ib, out](Tape& t) {
        const Eigen::MatrixXd& g = t.nodes_[static_cast<size_t>(out)].grad;
        t.accumulate(ia, g);
        t.accumulate(ib, g);
    });
}

Var Tape::add_row(Var a, Var row) {
    const Node& na = node(a);
    const Node& nr = node(row);
    require(nr.value.rows() == 1 && nr.value.cols() == na.value.cols(),
            "add_row: row must be 1 x cols(a)");
    Eigen::MatrixXd v = na.value;
    v.rowwise() += Eigen::RowVectorXd(nr.value.row(0));
    const int ia = a.index, ir = row.index;
    const int out = static_cast<int>(nodes_.size());
    return push(std::move(v), na.requires_grad || nr.requires_grad, [ia, ir, out](Tape& t) {
        const Eigen::MatrixXd& g = t.nodes_[static_cast<size_t>(out)].grad;
        t.accumulate(ia, g);
        t.accumulate(ir, g.colwise().sum());
    });
}

Var Tape::add_col(Var a, Var col) {
    const Node& na = node(a);
    const Node& nc = node(col);
    require(nc.value.cols() == 1 && nc.value.rows() == na.value.rows(),
            "add_col: col must be rows(a) x 1");
    Eigen::MatrixXd v = na.value;
    v.colwise() += Eigen::VectorXd(nc.value.col(0));
    const int ia = a.index, ic = col.index;
    const int out = static_cast<int>(nodes_.size());
    return push(std::move(v), na.requires_grad || nc.requires_grad, [ia, ic, out](Tape& t) {
        const Eigen::MatrixXd& g = t.nodes_[static_cast<size_t>(out)].grad;
        t.accumulate(ia, g);
        t.accumulate(ic, g.rowwise().sum());
    });
}

Var Tape::matmul(Var a, Var b) {
    const Node& na = node(a);
    const Node& nb = node(b);
    require(na.value.cols() == nb.value.rows(), "matmul: inner dimensions differ");
    const int ia = a.index, ib = b.index;
    const int out = static_cast<int>(nodes_.size());
    return push(na.value * nb.value, na.requires_grad || nb.requires_grad, [ia, ib, out](Tape& t) {
        const Eigen::MatrixXd& g = t.nodes_[static_cast<size_t>(out)].grad;
        t.accumulate(ia, g * t.nodes_[static_cast<size_t>(ib)].value.transpose());
        t.accumulate(ib, t.nodes_[static_cast<size_t>(ia)].value.transpose() * g);
    });
}

Var Tape::matmul_nt(Var a, Var b) {
    const Node& na = node(a);
    const Node& nb = node(b);
    require(na.value.cols() == nb.value.cols(), "matmul_nt: trailing dimensions differ");
    const int ia = a.index, ib = b.index;
    const int out = static_cast<int>(nodes_.size());
    return push(na.value * nb.value.transpose(), na.requires_grad || nb.requires_grad,
                [ia, ib, out](Tape& t) {
                    const Eigen::MatrixXd& g = t.nodes_[static_cast<size_t>(out)].grad;
                    t.accumulate(ia, g * t.nodes_[static_cast<size_t>(ib)].value);
                    t.accumulate(ib, g.transpose() * t.nodes_[static_cast<size_t>(ia)].value);
                });
}

Var Tape::scale(Var a, Var scalar) {
    const Node& na = node(a);
    const Node& ns = node(scalar);
    require(ns.value.rows() == 1 && ns.value.cols() == 1, "scale: scalar node must be 1x1");
    const int ia = a.index, is = scalar.index;
    const int out = static_cast<int>(nodes_.size());
    return push(ns.value(0, 0) * na.value, na.requires_grad || ns.requires_grad,
                [ia, is, out](Tape& t) {
                    const Eigen::MatrixXd& g = t.nodes_[static_cast<size_t>(out)].grad;
                    const double s = t.nodes_[static_cast<size_t>(is)].value(0, 0);
                    t.accumulate(ia, s * g);
                    Eigen::MatrixXd gs(1, 1);
                    gs(0, 0) = (g.array() * t.nodes_[static_cast<size_t>(ia)].value.array()).sum();
                    t.accumulate(is, gs);
                });
}

Var Tape::scale_const(Var a, double c) {
    const Node& na = node(a);
    const int ia = a.index;
    const int out = static_cast<int>(nodes_.size());
    return push(c * na.value, na.requires_grad, [ia, c, out](Tape& t) {
        t.accumulate(ia, c * t.nodes_[static_cast<size_t>(out)].grad);
    });
}

Var Tape::silu(Var a) {
    const Node& na = node(a);
    Eigen::ArrayXXd sig = 1.0 / (1.0 + (-na.value.array()).exp());
    Eigen::MatrixXd v = (na.value.array() * sig).matrix();
    const int ia = a.index;
    const int out = static_cast<int>(nodes_.size());
    return push(std::move(v), na.requires_grad, [ia, out](Tape& t) {
        const Eigen::MatrixXd& g = t.nodes_[static_cast<size_t>(out)].grad;
        const Eigen::ArrayXXd x = t.nodes_[static_cast<size_t>(ia)].value.array();
        const Eigen::ArrayXXd sig = 1.0 / (1.0 + (-x).exp());
        t.accumulate(ia, (g.array() * sig * (1.0 + x * (1.0 - sig))).matrix());
    });
}

Var Tape::masked_exp(Var a, const BoolMask& mask) {
    const Node& na = node(a);
    if (mask.size() != 0) {
        require(mask.rows() == na.value.rows() && mask.cols() == na.value.cols(),
                "masked_exp: mask shape mismatch");
    }
    Eigen::MatrixXd v(na.value.rows(), na.value.cols());
    for (Eigen::Index r = 0; r < v.rows(); ++r) {
        for (Eigen::Index c = 0; c < v.cols(); ++c) {
            const bool on = mask.size() == 0 || mask(r, c);
            v(r, c) = on ? std::exp(na.value(r, c)) : 0.0;
        }
    }
    const int ia = a.index;
    const int out = static_cast<int>(nodes_.size());
    return push(std::move(v), na.requires_grad, [ia, out](Tape& t) {
        const Eigen::MatrixXd& g = t.nodes_[static_cast<size_t>(out)].grad;
        const Eigen::MatrixXd& y = t.nodes_[static_cast<size_t>(out)].value;
        // Masked entries have y == 0, so they receive no gradient.
        t.accumulate(ia, (g.array() * y.array()).matrix());
    });
}

Var Tape::row_sum(Var a) {
    const Node& na = node(a);
    const int ia = a.index;
    const int out = static_cast<int>(nodes_.size());
    return push(na.value.rowwise().sum(), na.requires_grad, [ia, out](Tape& t) {
        const Eigen::MatrixXd& g = t.nodes_[static_cast<size_t>(out)].grad;
        const Eigen::Index cols = t.nodes_[static_cast<size_t>(ia)].value.cols();
        t.accumulate(ia, g.col(0).replicate(1, cols));
    });
}

Var Tape::div(Var a, Var b) {
    const Node& na = node(a);
    const Node& nb = node(b);
    require(na.value.rows() == nb.value.rows() && na.value.cols() == nb.value.cols(),
            "div: shape mismatch");
    const int ia = a.index, ib = b.index;
    const int out = static_cast<int>(nodes_.size());
    return push((na.value.array() / nb.value.array()).matrix(),
                na.requires_grad || nb.requires_grad, [ia, ib, out](Tape& t) {
                    const Eigen::MatrixXd& g = t.nodes_[static_cast<size_t>(out)].grad;
                    const Eigen::ArrayXXd av = t.nodes_[static_cast<size_t>(ia)].value.array();
                    const Eigen::ArrayXXd bv = t.nodes_[static_cast<size_t>(ib)].value.array();
                    t.accumulate(ia, (g.array() / bv).matrix());
                    t.accumulate(ib, (-g.array() * av / (bv * bv)).matrix());
                });
}

Var Tape::scale_rows(Var a, Var col) {
    const Node& na = node(a);
    const Node& nc = node(col);
    require(nc.value.cols() == 1 && nc.value.rows() == na.value.rows(),
            "scale_rows: col must be rows(a) x 1");
    Eigen::MatrixXd v = (na.value.array().colwise() * nc.value.col(0).array()).matrix();
    const int ia = a.index, ic = col.index;
    const int out = static_cast<int>(nodes_.size());
    return push(std::move(v), na.requires_grad || nc.requires_grad, [ia, ic, out](Tape& t) {
        const Eigen::MatrixXd& g = t.nodes_[static_cast<size_t>(out)].grad;
        const Eigen::MatrixXd& av = t.nodes_[static_cast<size_t>(ia)].value;
        const Eigen::VectorXd cv = t.nodes_[static_cast<size_t>(ic)].value.col(0);
        t.accumulate(ia, (g.array().colwise() * cv.array()).matrix());
        t.accumulate(ic, (g.array() * av.array()).rowwise().sum().matrix());
    });
}

Var Tape::row_softmax(Var a, const BoolMask& mask) {
    const Node& na = node(a);
    if (mask.size() != 0) {
        require(mask.rows() == na.value.rows() && mask.cols() == na.value.cols(),
                "row_softmax: mask shape mismatch");
    }
    Eigen::MatrixXd v = row_softmax_value(na.value, mask);
    const int ia = a.index;
    const int out = static_cast<int>(nodes_.size());
    return push(std::move(v), na.requires_grad, [ia, out](Tape& t) {
        const Eigen::MatrixXd& g = t.nodes_[static_cast<size_t>(out)].grad;
        const Eigen::MatrixXd& y = t.nodes_[static_cast<size_t>(out)].value;
        // dx = y .* (g - rowsum(g .* y)); masked entries have y == 0 so they
        // receive no gradient, matching their constant zero output.
        Eigen::VectorXd dot = (g.array() * y.array()).rowwise().sum();
        Eigen::MatrixXd dx = (y.array() * (g.array().colwise() - dot.array())).matrix();
        t.accumulate(ia, dx);
    });
}

Var Tape::layer_norm(Var x, Var gamma, Var beta, double eps) {
    const Node& nx = node(x);
    const Node& ng = node(gamma);
    const Node& nb = node(beta);
    const Eigen::Index cols = nx.value.cols();
    require(ng.value.rows() == 1 && ng.value.cols() == cols, "layer_norm: gamma must be 1 x cols");
    require(nb.value.rows() == 1 && nb.value.cols() == cols, "layer_norm: beta must be 1 x cols");
    require(cols > 0, "layer_norm: empty rows");

    Eigen::VectorXd mean = nx.value.rowwise().mean();
    Eigen::MatrixXd centered = nx.value.colwise() - mean;
    Eigen::VectorXd var = centered.array().square().rowwise().mean();
    Eigen::VectorXd inv_std = (var.array() + eps).rsqrt();
    Eigen::MatrixXd xhat = centered.array().colwise() * inv_std.array();
    Eigen::MatrixXd v = (xhat.array().rowwise() * ng.value.row(0).array()).matrix();
    v.rowwise() += Eigen::RowVectorXd(nb.value.row(0));

    const int ix = x.index, ig = gamma.index, ib = beta.index;
    const int out = static_cast<int>(nodes_.size());
    const bool req = nx.requires_grad || ng.requires_grad || nb.requires_grad;
    return push(std::move(v), req, [ix, ig, ib, eps, out](Tape& t) {
        const Eigen::MatrixXd& g = t.nodes_[static_cast<size_t>(out)].grad;
        const Eigen::MatrixXd& xv = t.nodes_[static_cast<size_t>(ix)].value;
        const Eigen::RowVectorXd gam = t.nodes_[static_cast<size_t>(ig)].value.row(0);
        const double d = static_cast<double>(xv.cols());

        Eigen::VectorXd mean = xv.rowwise().mean();
        Eigen::MatrixXd centered = xv.colwise() - mean;
        Eigen::VectorXd var = centered.array().square().rowwise().mean();
        Eigen::VectorXd inv_std = (var.array() + eps).rsqrt();
        Eigen::MatrixXd xhat = centered.array().colwise() * inv_std.array();

        t.accumulate(ib, g.colwise().sum());
        t.accumulate(ig, (g.array() * xhat.array()).colwise().sum().matrix());

        // dxhat = g .* gamma (row broadcast)
        Eigen::MatrixXd dxhat = g.array().rowwise() * gam.array();
        Eigen::VectorXd sum_dxhat = dxhat.rowwise().sum();
        Eigen::VectorXd sum_dxhat_xhat = (dxhat.array() * xhat.array()).rowwise().sum();
        Eigen::MatrixXd dx =
            ((dxhat.array() - (sum_dxhat.array() / d).replicate(1, xv.cols()) -
              xhat.array() * (sum_dxhat_xhat.array() / d).replicate(1, xv.cols()))
                 .colwise() *
             inv_std.array())
                .matrix();
        t.accumulate(ix, dx);
    });
}

Var Tape::weighted_layer_sum(std::shared_ptr<const std::vector<Eigen::MatrixXd>> layers,
                             Var kernel) {
    require(layers != nullptr && !layers->empty(), "weighted_layer_sum: no layers");
    const Node& nk = node(kernel);
    require(nk.value.cols() == 1 &&
                nk.value.rows() == static_cast<Eigen::Index>(layers->size()),
            "weighted_layer_sum: kernel must be [num_layers x 1]");
    const Eigen::Index rows = layers->front().rows();
    const Eigen::Index cols = layers->front().cols();
    Eigen::MatrixXd v = Eigen::MatrixXd::Zero(rows, cols);
    for (size_t l = 0; l < layers->size(); ++l) {
        require((*layers)[l].rows() == rows && (*layers)[l].cols() == cols,
                "weighted_layer_sum: layer shape mismatch");
        v += nk.value(static_cast<Eigen::Index>(l), 0) * (*layers)[l];
    }
    const int ik = kernel.index;
    const int out = static_cast<int>(nodes_.size());
    return push(std::move(v), nk.requires_grad, [layers, ik, out](Tape& t) {
        const Eigen::MatrixXd& g = t.nodes_[static_cast<size_t>(out)].grad;
        Eigen::MatrixXd gk(static_cast<Eigen::Index>(layers->size()), 1);
        for (size_t l = 0; l < layers->size(); ++l) {
            gk(static_cast<Eigen::Index>(l), 0) = (g.array() * (*layers)[l].array()).sum();
        }
        t.accumulate(ik, gk);
    });
}

Var Tape::mean_masked_cross_entropy(Var logits, std::vector<int> targets,
                                    std::vector<uint8_t> mask) {
    const Node& nl = node(logits);
    const Eigen::Index rows = nl.value.rows();
    const Eigen::Index vocab = nl.value.cols();
    require(static_cast<Eigen::Index>(targets.size()) == rows,
            "cross_entropy: one target per logits row required");
    require(mask.size() == targets.size(), "cross_entropy: mask size mismatch");

    double total = 0.0;
    int active = 0;
    for (Eigen::Index r = 0; r < rows; ++r) {
        if (!mask[static_cast<size_t>(r)]) continue;
        const int tgt = targets[static_cast<size_t>(r)];
        require(tgt >= 0 && tgt < vocab, "cross_entropy: target id out of vocabulary");
        const Eigen::RowVectorXd row = nl.value.row(r);
        const double mx = row.maxCoeff();
        const double lse = mx + std::log((row.array() - mx).exp().sum());
        total += lse - row(tgt);
        ++active;
    }
    require(active > 0, "cross_entropy: no unmasked positions");

    Eigen::MatrixXd v(1, 1);
    v(0, 0) = total / static_cast<double>(active);
    const int il = logits.index;
    const int out = static_cast<int>(nodes_.size());
    return push(std::move(v), nl.requires_grad,
                [il, out, targets = std::move(targets), mask = std::move(mask),
                 active](Tape& t) {
                    const double gscalar = t.nodes_[static_cast<size_t>(out)].grad(0, 0);
                    const Eigen::MatrixXd& lv = t.nodes_[static_cast<size_t>(il)].value;
                    Eigen::MatrixXd dl = Eigen::MatrixXd::Zero(lv.rows(), lv.cols());
                    const double inv = gscalar / static_cast<double>(active);
                    for (Eigen::Index r = 0; r < lv.rows(); ++r) {
                        if (!mask[static_cast<size_t>(r)]) continue;
                        Eigen::RowVectorXd p = stable_row_softmax(lv.row(r));
                        p(targets[static_cast<size_t>(r)]) -= 1.0;
                        dl.row(r) = inv * p;
                    }
                    t.accumulate(il, dl);
                });
}

void Tape::backward(Var loss_node) {
    Node& loss = node(loss_node);
    require(loss.value.rows() == 1 && loss.value.cols() == 1,
            "backward: loss node must be 1x1");
    require(loss.requires_grad,
            "backward: loss does not depend on any gradient-tracked leaf");
    for (auto& n : nodes_) {
        if (n.requires_grad) n.grad = Eigen::MatrixXd::Zero(n.value.rows(), n.value.cols());
    }
    loss.grad(0, 0) = 1.0;
    for (int i = loss_node.index; i >= 0; --i) {
        Node& n = nodes_[static_cast<size_t>(i)];
        if (n.requires_grad && n.backprop && n.grad.size() != 0) n.backprop(*this);
    }
}

} // namespace musiscene::model
