#pragma once

// Minimal reverse-mode automatic differentiation over Tensor values.
//
// Every operation returns a Var (shared node). Nodes remember their parents
// and a backward closure; calling backward() on a scalar root walks the graph
// in reverse topological order and accumulates gradients into every node
// that requires them. Graphs are freed when the last Var referencing the
// root goes out of scope; parameters are long-lived leaves.

#include <functional>
#include <initializer_list>
#include <memory>
#include <vector>

#include "silicon/tensor.hpp"

namespace silicon::ad {

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
    Tensor value;
    Tensor grad;  // allocated lazily, same shape as value
    bool requires_grad = false;
    std::vector<Var> parents;
    std::function<void(Node&)> backward_fn;

    Tensor& grad_buffer();
};

Var constant(Tensor value);
Var parameter(Tensor value);

/// Builds an interior node. The backward closure is dropped when no parent
/// requires a gradient.
Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn);

/// Seeds d(root)/d(root) = 1 and propagates. Root must hold one element.
void backward(const Var& root);
void zero_grad(std::span<const Var> params);

double scalar(const Var& v);

// Elementwise.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var relu(const Var& a);
Var leaky_relu(const Var& a, double slope);
Var sigmoid(const Var& a);
Var exp(const Var& a);
Var square(const Var& a);
/// x: (C,H,W) times a single-channel map a: (1,H,W), broadcast over channels.
Var mul_channel_broadcast(const Var& x, const Var& a);

// Reductions.
Var sum(const Var& a);
Var mean(const Var& a);
Var add_all(std::span<const Var> terms);  // sum of same-shape tensors
Var mean_abs_diff(const Var& a, const Var& b);
Var mean_sq_diff(const Var& a, const Var& b);

// Shape manipulation.
Var reshape(const Var& a, std::vector<int> shape);
Var concat_channels(std::span<const Var> parts);  // rank-3 (C,H,W), equal H and W
Var concat_flat(std::span<const Var> parts);      // flattens and joins into rank-1
Var broadcast_spatial(const Var& v, int h, int w);  // (d) -> (d,h,w)
Var upsample_bilinear(const Var& x, int h, int w);  // half-pixel centers, edge clamped
Var global_avg_pool(const Var& x);                  // (C,H,W) -> (C)

// Layers.
/// x: (Cin,H,W); weight: (Cout,Cin,k,k); bias: (Cout) or null. Zero padding.
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad);
/// Per-channel normalization over H×W with affine (C) gamma/beta.
Var instance_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
/// v: (in); weight: (out,in); bias: (out).
Var linear(const Var& v, const Var& weight, const Var& bias);

}  // namespace silicon::ad
