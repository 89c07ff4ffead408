#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "tensor.hpp"

namespace contrafeat::ad {

using contrafeat::Tensor;

// Shared kernels, also used by forward-only code paths.
// pad_mode: 0 zero-pads, 1 reflects (reflect-101). Reflection keeps flat
// fields flat at the border, which matters for the frozen extractor.
void conv2d_fwd(const float* x, int h, int w, int ci, const float* wt, int co, int stride, int pad,
                const float* bias, float* y, int ho, int wo, int pad_mode = 0);
void conv2d_bwd_input(const float* dy, int ho, int wo, int co, const float* wt, int ci, int stride,
                      int pad, float* dx, int h, int w, int pad_mode = 0);
void conv2d_bwd_weights(const float* dy, int ho, int wo, int co, const float* x, int h, int w,
                        int ci, int stride, int pad, float* dw, float* db, int pad_mode = 0);
void softmax_fwd(const float* x, float* y, int n);
inline int conv_out(int n, int stride, int pad) { return (n + 2 * pad - 3) / stride + 1; }

// Minimal reverse-mode tape. Node values are computed eagerly; backward
// closures are replayed in reverse creation order (creation order is
// topological by construction).
class Graph {
  public:
    struct Node {
        Tensor val;
        Tensor grad;
        std::function<void(Graph&)> back;
    };

    std::vector<Node> nodes;

    void clear() { nodes.clear(); }
    std::size_t size() const { return nodes.size(); }

    Tensor& val(int id) { return nodes[static_cast<std::size_t>(id)].val; }
    const Tensor& val(int id) const { return nodes[static_cast<std::size_t>(id)].val; }
    Tensor& grad(int id) { return nodes[static_cast<std::size_t>(id)].grad; }

    // Runs backward from a scalar node.
    void backward(int loss_id);

    // --- leaves ---
    int input(Tensor t);                 // differentiable leaf
    int constant(Tensor t) { return input(std::move(t)); }  // grads unused

    // --- elementwise ---
    int add(int a, int b);
    int sub(int a, int b);
    int mul(int a, int b);
    int scale(int a, float s);
    int add_scalar(int a, float s);
    int square(int a);
    int tanh_op(int a);
    int exp_op(int a);
    int log_eps(int a, float eps);
    int sqrt_eps(int a, float eps);
    int div_eps(int a, int b, float eps);      // same-shape a / (b + eps)
    int mul_cvec(int a, Tensor m);             // elementwise by constant
    int add_cvec(int a, Tensor c);

    // --- shape ---
    int reshape(int a, std::vector<int> shape);
    int row(int m, int r);                     // (R,C) -> (C)

    // --- linear algebra ---
    int matvec(int w, int x);                  // (R,C)*(C) -> (R)
    int matvec_const(Tensor w, int x);
    int linear(int w, int b, int x);           // (O,I)*(I)+(O)
    int outer(int a, int b);                   // (A),(B) -> (A,B)
    int normalize_to(int x, float length);     // length * x/||x||
    int normalize_sum(int x);                  // x / sum(x)
    int softmax(int x);

    // --- reductions ---
    int sum_all(int a);
    int mean_all(int a);
    int max_all(int a);                        // subgradient to first argmax
    int dot_rows(int a, int b);                // (S,C),(S,C) -> (S)
    int sqnorm_rows(int a);                    // (S,C) -> (S)
    int mean_rows(int a);                      // (S,C) -> (C)
    int div_by_scalar(int a, int s, float eps);  // a / (s + eps), s scalar node
    int weighted_sum(const std::vector<std::pair<int, float>>& terms);  // scalars

    // --- conv stacks ---
    // x: (H,W,Ci); weights: (Co,3,3,Ci); optional bias (Co). stride/pad as given.
    int conv2d(int x, int w, int b, int stride, int pad);
    int conv2d_frozen(int x, Tensor w, int stride, int pad, int pad_mode = 0);
    int upsample2x(int x);                     // nearest (H,W,C) -> (2H,2W,C)

    // Custom node escape hatch (used by the renderer).
    int custom(Tensor val, std::function<void(Graph&)> back);

  private:
    int push(Tensor val, std::function<void(Graph&)> back = nullptr);
};

}  // namespace contrafeat::ad
