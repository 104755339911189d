#include "trafo/grad.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace trafo::grad {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// ---------------------------------------------------------------------------
// ParameterStore

std::size_t ParameterStore::add_slice(std::string name, std::size_t rows, std::size_t cols) {
    if (find(name)) throw GradError("duplicate parameter slice '" + name + "'");
    Slice s;
    s.name = std::move(name);
    s.offset = flat_.size();
    s.rows = rows;
    s.cols = cols;
    flat_.resize(flat_.size() + s.size(), 0.0);
    slices_.push_back(std::move(s));
    return slices_.size() - 1;
}

std::optional<std::size_t> ParameterStore::find(const std::string& name) const {
    for (std::size_t i = 0; i < slices_.size(); ++i) {
        if (slices_[i].name == name) return i;
    }
    return std::nullopt;
}

std::size_t ParameterStore::index_of(const std::string& name) const {
    auto i = find(name);
    if (!i) throw GradError("no parameter slice named '" + name + "'");
    return *i;
}

std::span<double> ParameterStore::values(std::size_t i) {
    const auto& s = slices_.at(i);
    return {flat_.data() + s.offset, s.size()};
}

std::span<const double> ParameterStore::values(std::size_t i) const {
    const auto& s = slices_.at(i);
    return {flat_.data() + s.offset, s.size()};
}

std::vector<char> ParameterStore::trainable_mask() const {
    std::vector<char> mask(flat_.size(), 0);
    for (const auto& s : slices_) {
        std::fill_n(mask.begin() + static_cast<std::ptrdiff_t>(s.offset), s.size(),
                    static_cast<char>(s.trainable));
    }
    return mask;
}

// ---------------------------------------------------------------------------
// Graph construction

const char* op_name(Op op) {
    switch (op) {
        case Op::Const: return "Const";
        case Op::Param: return "Param";
        case Op::Input: return "Input";
        case Op::Add: return "Add";
        case Op::Sub: return "Sub";
        case Op::Mul: return "Mul";
        case Op::Neg: return "Neg";
        case Op::Exp: return "Exp";
        case Op::Log: return "Log";
        case Op::Sqrt: return "Sqrt";
        case Op::Softplus: return "Softplus";
        case Op::Sigmoid: return "Sigmoid";
        case Op::Tanh: return "Tanh";
        case Op::Relu: return "Relu";
        case Op::Dot: return "Dot";
        case Op::MatVec: return "MatVec";
        case Op::CumSum: return "CumSum";
        case Op::Sum: return "Sum";
        case Op::Slice: return "Slice";
        case Op::Concat: return "Concat";
        case Op::Gather: return "Gather";
        case Op::ClampMin: return "ClampMin";
        case Op::CdfZ: return "CdfZ";
        case Op::SurvZ: return "SurvZ";
        case Op::LogPdfZ: return "LogPdfZ";
    }
    return "?";
}

NodeId Graph::push(Node n) {
    for (NodeId c : n.children) {
        if (c < 0 || static_cast<std::size_t>(c) >= nodes_.size()) {
            throw GradError("graph child id out of range");
        }
        n.dynamic = n.dynamic || nodes_[static_cast<std::size_t>(c)].dynamic;
    }
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Graph::constant(std::vector<double> v) {
    Node n;
    n.op = Op::Const;
    n.size = v.size();
    n.constant = std::move(v);
    return push(std::move(n));
}

NodeId Graph::param(std::size_t slice, std::size_t size) {
    Node n;
    n.op = Op::Param;
    n.index = slice;
    n.size = size;
    return push(std::move(n));
}

NodeId Graph::input(std::size_t slot, std::size_t size) {
    Node n;
    n.op = Op::Input;
    n.index = slot;
    n.size = size;
    n.dynamic = true;
    input_slots_ = std::max(input_slots_, slot + 1);
    return push(std::move(n));
}

NodeId Graph::unary(Op op, NodeId a) {
    Node n;
    n.op = op;
    n.children = {a};
    n.size = size(a);
    return push(std::move(n));
}

NodeId Graph::binary(Op op, NodeId a, NodeId b) {
    const auto sa = size(a);
    const auto sb = size(b);
    if (sa != sb && sa != 1 && sb != 1) {
        throw GradError(std::string(op_name(op)) + ": incompatible sizes " + std::to_string(sa) +
                        " and " + std::to_string(sb));
    }
    Node n;
    n.op = op;
    n.children = {a, b};
    n.size = std::max(sa, sb);
    return push(std::move(n));
}

NodeId Graph::add(NodeId a, NodeId b) { return binary(Op::Add, a, b); }
NodeId Graph::sub(NodeId a, NodeId b) { return binary(Op::Sub, a, b); }
NodeId Graph::mul(NodeId a, NodeId b) { return binary(Op::Mul, a, b); }
NodeId Graph::neg(NodeId a) { return unary(Op::Neg, a); }
NodeId Graph::exp(NodeId a) { return unary(Op::Exp, a); }
NodeId Graph::log(NodeId a) { return unary(Op::Log, a); }
NodeId Graph::sqrt(NodeId a) { return unary(Op::Sqrt, a); }
NodeId Graph::softplus(NodeId a) { return unary(Op::Softplus, a); }
NodeId Graph::sigmoid(NodeId a) { return unary(Op::Sigmoid, a); }
NodeId Graph::tanh(NodeId a) { return unary(Op::Tanh, a); }
NodeId Graph::relu(NodeId a) { return unary(Op::Relu, a); }

NodeId Graph::dot(NodeId a, NodeId b) {
    if (size(a) != size(b)) throw GradError("Dot: size mismatch");
    Node n;
    n.op = Op::Dot;
    n.children = {a, b};
    n.size = 1;
    return push(std::move(n));
}

NodeId Graph::matvec(NodeId w, NodeId x, std::size_t rows) {
    if (rows == 0 || size(w) != rows * size(x)) throw GradError("MatVec: shape mismatch");
    Node n;
    n.op = Op::MatVec;
    n.children = {w, x};
    n.size = rows;
    n.aux = rows;
    return push(std::move(n));
}

NodeId Graph::cumsum(NodeId a) { return unary(Op::CumSum, a); }

NodeId Graph::sum(NodeId a) {
    Node n;
    n.op = Op::Sum;
    n.children = {a};
    n.size = 1;
    return push(std::move(n));
}

NodeId Graph::slice(NodeId a, std::size_t offset, std::size_t length) {
    if (length == 0 || offset + length > size(a)) throw GradError("Slice: out of range");
    Node n;
    n.op = Op::Slice;
    n.children = {a};
    n.size = length;
    n.index = offset;
    return push(std::move(n));
}

NodeId Graph::concat(const std::vector<NodeId>& parts) {
    if (parts.empty()) throw GradError("Concat: no parts");
    Node n;
    n.op = Op::Concat;
    n.children = parts;
    n.size = 0;
    for (NodeId p : parts) n.size += size(p);
    return push(std::move(n));
}

NodeId Graph::gather(NodeId table, NodeId index) {
    if (size(index) != 1) throw GradError("Gather: index must be scalar");
    Node n;
    n.op = Op::Gather;
    n.children = {table, index};
    n.size = 1;
    return push(std::move(n));
}

NodeId Graph::clamp_min(NodeId a, double floor) {
    Node n;
    n.op = Op::ClampMin;
    n.children = {a};
    n.size = size(a);
    n.real = floor;
    return push(std::move(n));
}

NodeId Graph::cdf(Latent d, NodeId z) {
    NodeId id = unary(Op::CdfZ, z);
    nodes_.back().dist = d;
    return id;
}

NodeId Graph::survival(Latent d, NodeId z) {
    NodeId id = unary(Op::SurvZ, z);
    nodes_.back().dist = d;
    return id;
}

NodeId Graph::log_pdf(Latent d, NodeId z) {
    NodeId id = unary(Op::LogPdfZ, z);
    nodes_.back().dist = d;
    return id;
}

// ---------------------------------------------------------------------------
// Executor

Executor::Executor(const Graph& graph, std::vector<NodeId> roots)
    : graph_(graph), roots_(std::move(roots)) {
    const std::size_t n = graph_.node_count();
    offset_.resize(n + 1, 0);
    for (std::size_t i = 0; i < n; ++i) {
        offset_[i + 1] = offset_[i] + graph_.node(static_cast<NodeId>(i)).size;
    }
    values_.assign(offset_[n], 0.0);
    adjoints_.assign(offset_[n], 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& nd = graph_.node(static_cast<NodeId>(i));
        if (!nd.dynamic) static_nodes_.push_back(static_cast<NodeId>(i));
        if (nd.op == Op::Const) {
            std::copy(nd.constant.begin(), nd.constant.end(), values_.begin() + offset_[i]);
        }
    }
    for (NodeId r : roots_) {
        std::vector<char> seen(n, 0);
        std::vector<NodeId> stack{r};
        std::vector<NodeId> order;
        while (!stack.empty()) {
            NodeId id = stack.back();
            stack.pop_back();
            const auto& nd = graph_.node(id);
            if (!nd.dynamic || seen[static_cast<std::size_t>(id)]) continue;
            seen[static_cast<std::size_t>(id)] = 1;
            order.push_back(id);
            for (NodeId c : nd.children) stack.push_back(c);
        }
        std::sort(order.begin(), order.end());
        dynamic_order_.push_back(std::move(order));
    }
}

std::span<const double> Executor::value(NodeId id) const {
    const auto i = static_cast<std::size_t>(id);
    return {values_.data() + offset_[i], offset_[i + 1] - offset_[i]};
}

void Executor::forward_static(const ParameterStore& params) {
    std::fill(adjoints_.begin(), adjoints_.end(), 0.0);
    for (NodeId id : static_nodes_) {
        const auto& nd = graph_.node(id);
        if (nd.op == Op::Param) {
            auto src = params.values(nd.index);
            if (src.size() != nd.size) throw GradError("parameter slice size mismatch");
            std::copy(src.begin(), src.end(), values_.begin() + offset_[static_cast<std::size_t>(id)]);
        } else if (nd.op != Op::Const) {
            eval_node(id);
        }
    }
}

double Executor::forward(std::size_t r, Inputs inputs) {
    inputs_ = inputs;
    for (NodeId id : dynamic_order_.at(r)) eval_node(id);
    const double out = values_[offset_[static_cast<std::size_t>(roots_[r])]];
    if (std::isnan(out)) report_nan(r);
    return out;
}

void Executor::report_nan(std::size_t r) const {
    NodeId first = roots_[r];
    auto has_nan = [&](NodeId id) {
        auto v = value(id);
        return std::any_of(v.begin(), v.end(), [](double x) { return std::isnan(x); });
    };
    bool found = false;
    for (NodeId id : static_nodes_) {
        if (has_nan(id)) {
            first = id;
            found = true;
            break;
        }
    }
    if (!found) {
        for (NodeId id : dynamic_order_[r]) {
            if (has_nan(id)) {
                first = id;
                break;
            }
        }
    }
    const auto& nd = graph_.node(first);
    std::ostringstream os;
    os << "NaN produced by node #" << first << " (" << op_name(nd.op);
    if (!nd.label.empty()) os << " '" << nd.label << "'";
    os << ")";
    throw GradError(os.str());
}

void Executor::eval_node(NodeId id) {
    const auto& nd = graph_.node(id);
    double* out = values_.data() + offset_[static_cast<std::size_t>(id)];
    const std::size_t n = nd.size;
    auto in = [&](std::size_t k) {
        return values_.data() + offset_[static_cast<std::size_t>(nd.children[k])];
    };
    auto in_size = [&](std::size_t k) { return graph_.size(nd.children[k]); };

    switch (nd.op) {
        case Op::Const:
        case Op::Param: return;
        case Op::Input: {
            const double* src = inputs_[nd.index];
            std::copy(src, src + n, out);
            return;
        }
        case Op::Add:
        case Op::Sub:
        case Op::Mul: {
            const double* a = in(0);
            const double* b = in(1);
            const bool ba = in_size(0) == 1 && n > 1;
            const bool bb = in_size(1) == 1 && n > 1;
            for (std::size_t i = 0; i < n; ++i) {
                const double x = a[ba ? 0 : i];
                const double y = b[bb ? 0 : i];
                out[i] = nd.op == Op::Add ? x + y : nd.op == Op::Sub ? x - y : x * y;
            }
            return;
        }
        case Op::Neg: {
            const double* a = in(0);
            for (std::size_t i = 0; i < n; ++i) out[i] = -a[i];
            return;
        }
        case Op::Exp: {
            const double* a = in(0);
            for (std::size_t i = 0; i < n; ++i) out[i] = std::exp(a[i]);
            return;
        }
        case Op::Log: {
            const double* a = in(0);
            for (std::size_t i = 0; i < n; ++i) out[i] = std::log(a[i]);
            return;
        }
        case Op::Sqrt: {
            const double* a = in(0);
            for (std::size_t i = 0; i < n; ++i) out[i] = std::sqrt(a[i]);
            return;
        }
        case Op::Softplus: {
            const double* a = in(0);
            for (std::size_t i = 0; i < n; ++i) out[i] = softplus(a[i]);
            return;
        }
        case Op::Sigmoid: {
            const double* a = in(0);
            for (std::size_t i = 0; i < n; ++i) out[i] = sigmoid(a[i]);
            return;
        }
        case Op::Tanh: {
            const double* a = in(0);
            for (std::size_t i = 0; i < n; ++i) out[i] = std::tanh(a[i]);
            return;
        }
        case Op::Relu: {
            const double* a = in(0);
            for (std::size_t i = 0; i < n; ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
            return;
        }
        case Op::Dot: {
            const double* a = in(0);
            const double* b = in(1);
            double s = 0.0;
            for (std::size_t i = 0; i < in_size(0); ++i) s += a[i] * b[i];
            out[0] = s;
            return;
        }
        case Op::MatVec: {
            const double* w = in(0);
            const double* x = in(1);
            const std::size_t cols = in_size(1);
            for (std::size_t r = 0; r < n; ++r) {
                double s = 0.0;
                const double* row = w + r * cols;
                for (std::size_t c = 0; c < cols; ++c) s += row[c] * x[c];
                out[r] = s;
            }
            return;
        }
        case Op::CumSum: {
            const double* a = in(0);
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                s += a[i];
                out[i] = s;
            }
            return;
        }
        case Op::Sum: {
            const double* a = in(0);
            double s = 0.0;
            for (std::size_t i = 0; i < in_size(0); ++i) s += a[i];
            out[0] = s;
            return;
        }
        case Op::Slice: {
            const double* a = in(0) + nd.index;
            std::copy(a, a + n, out);
            return;
        }
        case Op::Concat: {
            std::size_t at = 0;
            for (std::size_t k = 0; k < nd.children.size(); ++k) {
                const double* a = in(k);
                std::copy(a, a + in_size(k), out + at);
                at += in_size(k);
            }
            return;
        }
        case Op::Gather: {
            const auto k = static_cast<long>(in(1)[0]);
            if (k >= static_cast<long>(in_size(0))) throw GradError("Gather: index out of range");
            out[0] = k < 0 ? 0.0 : in(0)[k];
            return;
        }
        case Op::ClampMin: {
            const double* a = in(0);
            for (std::size_t i = 0; i < n; ++i) {
                if (a[i] < nd.real) {
                    out[i] = nd.real;
                    ++floored_;
                } else {
                    out[i] = a[i];
                }
            }
            return;
        }
        case Op::CdfZ: {
            const double* a = in(0);
            for (std::size_t i = 0; i < n; ++i) out[i] = trafo::cdf(nd.dist, a[i]);
            return;
        }
        case Op::SurvZ: {
            const double* a = in(0);
            for (std::size_t i = 0; i < n; ++i) out[i] = trafo::survival(nd.dist, a[i]);
            return;
        }
        case Op::LogPdfZ: {
            const double* a = in(0);
            for (std::size_t i = 0; i < n; ++i) out[i] = trafo::log_pdf(nd.dist, a[i]);
            return;
        }
    }
}

void Executor::propagate(NodeId id) {
    const auto& nd = graph_.node(id);
    const std::size_t n = nd.size;
    const double* g = adjoints_.data() + offset_[static_cast<std::size_t>(id)];
    const double* out = values_.data() + offset_[static_cast<std::size_t>(id)];
    auto cval = [&](std::size_t k) {
        return values_.data() + offset_[static_cast<std::size_t>(nd.children[k])];
    };
    auto cadj = [&](std::size_t k) {
        return adjoints_.data() + offset_[static_cast<std::size_t>(nd.children[k])];
    };
    auto csize = [&](std::size_t k) { return graph_.size(nd.children[k]); };

    switch (nd.op) {
        case Op::Const:
        case Op::Param:
        case Op::Input: return;
        case Op::Add:
        case Op::Sub:
        case Op::Mul: {
            const bool ba = csize(0) == 1 && n > 1;
            const bool bb = csize(1) == 1 && n > 1;
            double* ga = cadj(0);
            double* gb = cadj(1);
            const double* a = cval(0);
            const double* b = cval(1);
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t ia = ba ? 0 : i;
                const std::size_t ib = bb ? 0 : i;
                if (nd.op == Op::Add) {
                    ga[ia] += g[i];
                    gb[ib] += g[i];
                } else if (nd.op == Op::Sub) {
                    ga[ia] += g[i];
                    gb[ib] -= g[i];
                } else {
                    ga[ia] += g[i] * b[ib];
                    gb[ib] += g[i] * a[ia];
                }
            }
            return;
        }
        case Op::Neg: {
            double* ga = cadj(0);
            for (std::size_t i = 0; i < n; ++i) ga[i] -= g[i];
            return;
        }
        case Op::Exp: {
            double* ga = cadj(0);
            for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * out[i];
            return;
        }
        case Op::Log: {
            double* ga = cadj(0);
            const double* a = cval(0);
            for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] / a[i];
            return;
        }
        case Op::Sqrt: {
            double* ga = cadj(0);
            for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * 0.5 / out[i];
            return;
        }
        case Op::Softplus: {
            double* ga = cadj(0);
            const double* a = cval(0);
            for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * sigmoid(a[i]);
            return;
        }
        case Op::Sigmoid: {
            double* ga = cadj(0);
            for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * out[i] * (1.0 - out[i]);
            return;
        }
        case Op::Tanh: {
            double* ga = cadj(0);
            for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * (1.0 - out[i] * out[i]);
            return;
        }
        case Op::Relu: {
            double* ga = cadj(0);
            const double* a = cval(0);
            for (std::size_t i = 0; i < n; ++i) {
                if (a[i] > 0.0) ga[i] += g[i];
            }
            return;
        }
        case Op::Dot: {
            double* ga = cadj(0);
            double* gb = cadj(1);
            const double* a = cval(0);
            const double* b = cval(1);
            for (std::size_t i = 0; i < csize(0); ++i) {
                ga[i] += g[0] * b[i];
                gb[i] += g[0] * a[i];
            }
            return;
        }
        case Op::MatVec: {
            const std::size_t cols = csize(1);
            double* gw = cadj(0);
            double* gx = cadj(1);
            const double* w = cval(0);
            const double* x = cval(1);
            for (std::size_t r = 0; r < n; ++r) {
                const double gr = g[r];
                if (gr == 0.0) continue;
                for (std::size_t c = 0; c < cols; ++c) {
                    gw[r * cols + c] += gr * x[c];
                    gx[c] += gr * w[r * cols + c];
                }
            }
            return;
        }
        case Op::CumSum: {
            double* ga = cadj(0);
            double s = 0.0;
            for (std::size_t i = n; i-- > 0;) {
                s += g[i];
                ga[i] += s;
            }
            return;
        }
        case Op::Sum: {
            double* ga = cadj(0);
            for (std::size_t i = 0; i < csize(0); ++i) ga[i] += g[0];
            return;
        }
        case Op::Slice: {
            double* ga = cadj(0) + nd.index;
            for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
            return;
        }
        case Op::Concat: {
            std::size_t at = 0;
            for (std::size_t k = 0; k < nd.children.size(); ++k) {
                double* ga = cadj(k);
                for (std::size_t i = 0; i < csize(k); ++i) ga[i] += g[at + i];
                at += csize(k);
            }
            return;
        }
        case Op::Gather: {
            const auto k = static_cast<long>(cval(1)[0]);
            if (k >= 0) cadj(0)[k] += g[0];
            return;
        }
        case Op::ClampMin: {
            double* ga = cadj(0);
            const double* a = cval(0);
            for (std::size_t i = 0; i < n; ++i) {
                if (a[i] >= nd.real) ga[i] += g[i];
            }
            return;
        }
        case Op::CdfZ:
        case Op::SurvZ: {
            double* ga = cadj(0);
            const double* a = cval(0);
            const double sign = nd.op == Op::CdfZ ? 1.0 : -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (std::isinf(a[i])) continue;
                ga[i] += sign * g[i] * std::exp(trafo::log_pdf(nd.dist, a[i]));
            }
            return;
        }
        case Op::LogPdfZ: {
            double* ga = cadj(0);
            const double* a = cval(0);
            for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * trafo::dlog_pdf(nd.dist, a[i]);
            return;
        }
    }
}

void Executor::backward(std::size_t r, double seed) {
    const auto& order = dynamic_order_.at(r);
    for (NodeId id : order) {
        const auto i = static_cast<std::size_t>(id);
        std::fill(adjoints_.begin() + static_cast<std::ptrdiff_t>(offset_[i]),
                  adjoints_.begin() + static_cast<std::ptrdiff_t>(offset_[i + 1]), 0.0);
    }
    const NodeId root = roots_[r];
    const auto ri = static_cast<std::size_t>(root);
    if (!graph_.node(root).dynamic) {
        adjoints_[offset_[ri]] += seed;
        return;
    }
    adjoints_[offset_[ri]] = seed;
    for (auto it = order.rbegin(); it != order.rend(); ++it) propagate(*it);
}

void Executor::seed_static(NodeId id, double seed) {
    if (graph_.node(id).dynamic) throw GradError("seed_static on a dynamic node");
    adjoints_[offset_[static_cast<std::size_t>(id)]] += seed;
}

void Executor::backward_static(const ParameterStore& params, std::span<double> gradient) {
    for (auto it = static_nodes_.rbegin(); it != static_nodes_.rend(); ++it) {
        const NodeId id = *it;
        const auto& nd = graph_.node(id);
        if (nd.op == Op::Param) {
            const auto& s = params.slice(nd.index);
            if (!s.trainable) continue;
            const double* g = adjoints_.data() + offset_[static_cast<std::size_t>(id)];
            for (std::size_t k = 0; k < nd.size; ++k) gradient[s.offset + k] += g[k];
        } else {
            propagate(id);
        }
    }
}

void Executor::merge_static_adjoints(const Executor& other) {
    for (NodeId id : static_nodes_) {
        const auto i = static_cast<std::size_t>(id);
        for (std::size_t k = offset_[i]; k < offset_[i + 1]; ++k) adjoints_[k] += other.adjoints_[k];
    }
}

double forward(const Graph& g, NodeId root, const ParameterStore& params, Inputs inputs) {
    Executor ex(g, {root});
    ex.forward_static(params);
    return ex.forward(0, inputs);
}

std::vector<double> backward(const Graph& g, NodeId root, const ParameterStore& params,
                             Inputs inputs, double seed) {
    Executor ex(g, {root});
    ex.forward_static(params);
    ex.forward(0, inputs);
    ex.backward(0, seed);
    std::vector<double> grad(params.size(), 0.0);
    ex.backward_static(params, grad);
    return grad;
}

}  // namespace trafo::grad
