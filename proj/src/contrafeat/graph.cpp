#include "graph.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>

namespace contrafeat::ad {

namespace {
inline int pad_index(int i, int n, int pad_mode) {
    if (i >= 0 && i < n) return i;
    if (pad_mode == 0) return -1;
    return i < 0 ? -i : 2 * n - 2 - i;  // reflect-101
}
}  // namespace

void conv2d_fwd(const float* x, int h, int w, int ci, const float* wt, int co, int stride, int pad,
                const float* bias, float* y, int ho, int wo, int pad_mode) {
    for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
            float* yp = y + (static_cast<std::size_t>(oy) * wo + ox) * co;
            for (int c = 0; c < co; ++c) {
                float acc = bias ? bias[c] : 0.0f;
                const float* wc = wt + static_cast<std::size_t>(c) * 9 * ci;
                for (int ky = 0; ky < 3; ++ky) {
                    const int iy = pad_index(oy * stride - pad + ky, h, pad_mode);
                    if (iy < 0) continue;
                    for (int kx = 0; kx < 3; ++kx) {
                        const int ix = pad_index(ox * stride - pad + kx, w, pad_mode);
                        if (ix < 0) continue;
                        const float* xp = x + (static_cast<std::size_t>(iy) * w + ix) * ci;
                        const float* wp = wc + (ky * 3 + kx) * ci;
                        float s = 0.0f;
                        for (int i = 0; i < ci; ++i) s += xp[i] * wp[i];
                        acc += s;
                    }
                }
                yp[c] = acc;
            }
        }
    }
}

void conv2d_bwd_input(const float* dy, int ho, int wo, int co, const float* wt, int ci, int stride,
                      int pad, float* dx, int h, int w, int pad_mode) {
    for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
            const float* gp = dy + (static_cast<std::size_t>(oy) * wo + ox) * co;
            for (int ky = 0; ky < 3; ++ky) {
                const int iy = pad_index(oy * stride - pad + ky, h, pad_mode);
                if (iy < 0) continue;
                for (int kx = 0; kx < 3; ++kx) {
                    const int ix = pad_index(ox * stride - pad + kx, w, pad_mode);
                    if (ix < 0) continue;
                    float* xp = dx + (static_cast<std::size_t>(iy) * w + ix) * ci;
                    for (int c = 0; c < co; ++c) {
                        const float g = gp[c];
                        if (g == 0.0f) continue;
                        const float* wp = wt + (static_cast<std::size_t>(c) * 9 + ky * 3 + kx) * ci;
                        for (int i = 0; i < ci; ++i) xp[i] += g * wp[i];
                    }
                }
            }
        }
    }
}

void conv2d_bwd_weights(const float* dy, int ho, int wo, int co, const float* x, int h, int w,
                        int ci, int stride, int pad, float* dw, float* db, int pad_mode) {
    for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
            const float* gp = dy + (static_cast<std::size_t>(oy) * wo + ox) * co;
            for (int ky = 0; ky < 3; ++ky) {
                const int iy = pad_index(oy * stride - pad + ky, h, pad_mode);
                if (iy < 0) continue;
                for (int kx = 0; kx < 3; ++kx) {
                    const int ix = pad_index(ox * stride - pad + kx, w, pad_mode);
                    if (ix < 0) continue;
                    const float* xp = x + (static_cast<std::size_t>(iy) * w + ix) * ci;
                    for (int c = 0; c < co; ++c) {
                        const float g = gp[c];
                        if (g == 0.0f) continue;
                        float* wp = dw + (static_cast<std::size_t>(c) * 9 + ky * 3 + kx) * ci;
                        for (int i = 0; i < ci; ++i) wp[i] += g * xp[i];
                    }
                }
            }
            if (db)
                for (int c = 0; c < co; ++c) db[c] += gp[c];
        }
    }
}

void softmax_fwd(const float* x, float* y, int n) {
    float mx = x[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, x[i]);
    float sum = 0.0f;
    for (int i = 0; i < n; ++i) {
        y[i] = std::exp(x[i] - mx);
        sum += y[i];
    }
    for (int i = 0; i < n; ++i) y[i] /= sum;
}

int Graph::push(Tensor val, std::function<void(Graph&)> back) {
    nodes.push_back(Node{std::move(val), Tensor{}, std::move(back)});
    return static_cast<int>(nodes.size()) - 1;
}

int Graph::custom(Tensor val, std::function<void(Graph&)> back) {
    return push(std::move(val), std::move(back));
}

void Graph::backward(int loss_id) {
    assert(val(loss_id).size() == 1);
    for (int i = 0; i <= loss_id; ++i) {
        Node& n = nodes[static_cast<std::size_t>(i)];
        n.grad = Tensor(n.val.shape);
    }
    grad(loss_id)[0] = 1.0f;
    for (int i = loss_id; i >= 0; --i) {
        Node& n = nodes[static_cast<std::size_t>(i)];
        if (n.back) n.back(*this);
    }
}

int Graph::input(Tensor t) { return push(std::move(t)); }

int Graph::add(int a, int b) {
    assert(val(a).same_shape(val(b)));
    Tensor y = val(a);
    const Tensor& vb = val(b);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += vb[i];
    int id = push(std::move(y));
    nodes.back().back = [id, a, b](Graph& g) {
        const Tensor& gy = g.grad(id);
        Tensor &ga = g.grad(a), &gb = g.grad(b);
        for (std::size_t i = 0; i < gy.size(); ++i) {
            ga[i] += gy[i];
            gb[i] += gy[i];
        }
    };
    return id;
}

int Graph::sub(int a, int b) {
    assert(val(a).same_shape(val(b)));
    Tensor y = val(a);
    const Tensor& vb = val(b);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] -= vb[i];
    int id = push(std::move(y));
    nodes.back().back = [id, a, b](Graph& g) {
        const Tensor& gy = g.grad(id);
        Tensor &ga = g.grad(a), &gb = g.grad(b);
        for (std::size_t i = 0; i < gy.size(); ++i) {
            ga[i] += gy[i];
            gb[i] -= gy[i];
        }
    };
    return id;
}

int Graph::mul(int a, int b) {
    assert(val(a).same_shape(val(b)));
    Tensor y = val(a);
    const Tensor& vb = val(b);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] *= vb[i];
    int id = push(std::move(y));
    nodes.back().back = [id, a, b](Graph& g) {
        const Tensor& gy = g.grad(id);
        const Tensor &va = g.val(a), &vb2 = g.val(b);
        Tensor &ga = g.grad(a), &gb = g.grad(b);
        for (std::size_t i = 0; i < gy.size(); ++i) {
            ga[i] += gy[i] * vb2[i];
            gb[i] += gy[i] * va[i];
        }
    };
    return id;
}

int Graph::scale(int a, float s) {
    Tensor y = val(a);
    for (auto& e : y.v) e *= s;
    int id = push(std::move(y));
    nodes.back().back = [id, a, s](Graph& g) {
        const Tensor& gy = g.grad(id);
        Tensor& ga = g.grad(a);
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * s;
    };
    return id;
}

int Graph::add_scalar(int a, float s) {
    Tensor y = val(a);
    for (auto& e : y.v) e += s;
    int id = push(std::move(y));
    nodes.back().back = [id, a](Graph& g) {
        const Tensor& gy = g.grad(id);
        Tensor& ga = g.grad(a);
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
    };
    return id;
}

int Graph::square(int a) {
    Tensor y = val(a);
    for (auto& e : y.v) e *= e;
    int id = push(std::move(y));
    nodes.back().back = [id, a](Graph& g) {
        const Tensor& gy = g.grad(id);
        const Tensor& va = g.val(a);
        Tensor& ga = g.grad(a);
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += 2.0f * va[i] * gy[i];
    };
    return id;
}

int Graph::tanh_op(int a) {
    Tensor y = val(a);
    for (auto& e : y.v) e = std::tanh(e);
    int id = push(std::move(y));
    nodes.back().back = [id, a](Graph& g) {
        const Tensor& gy = g.grad(id);
        const Tensor& vy = g.val(id);
        Tensor& ga = g.grad(a);
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * (1.0f - vy[i] * vy[i]);
    };
    return id;
}

int Graph::exp_op(int a) {
    Tensor y = val(a);
    for (auto& e : y.v) e = std::exp(e);
    int id = push(std::move(y));
    nodes.back().back = [id, a](Graph& g) {
        const Tensor& gy = g.grad(id);
        const Tensor& vy = g.val(id);
        Tensor& ga = g.grad(a);
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * vy[i];
    };
    return id;
}

int Graph::log_eps(int a, float eps) {
    Tensor y = val(a);
    for (auto& e : y.v) e = std::log(e + eps);
    int id = push(std::move(y));
    nodes.back().back = [id, a, eps](Graph& g) {
        const Tensor& gy = g.grad(id);
        const Tensor& va = g.val(a);
        Tensor& ga = g.grad(a);
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] / (va[i] + eps);
    };
    return id;
}

int Graph::sqrt_eps(int a, float eps) {
    Tensor y = val(a);
    for (auto& e : y.v) e = std::sqrt(e + eps);
    int id = push(std::move(y));
    nodes.back().back = [id, a](Graph& g) {
        const Tensor& gy = g.grad(id);
        const Tensor& vy = g.val(id);
        Tensor& ga = g.grad(a);
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * 0.5f / vy[i];
    };
    return id;
}

int Graph::div_eps(int a, int b, float eps) {
    assert(val(a).same_shape(val(b)));
    Tensor y = val(a);
    const Tensor& vb = val(b);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] /= (vb[i] + eps);
    int id = push(std::move(y));
    nodes.back().back = [id, a, b, eps](Graph& g) {
        const Tensor& gy = g.grad(id);
        const Tensor &va = g.val(a), &vb2 = g.val(b);
        Tensor &ga = g.grad(a), &gb = g.grad(b);
        for (std::size_t i = 0; i < gy.size(); ++i) {
            const float den = vb2[i] + eps;
            ga[i] += gy[i] / den;
            gb[i] -= gy[i] * va[i] / (den * den);
        }
    };
    return id;
}

int Graph::mul_cvec(int a, Tensor m) {
    assert(val(a).same_shape(m));
    Tensor y = val(a);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] *= m[i];
    int id = push(std::move(y));
    nodes.back().back = [id, a, m = std::move(m)](Graph& g) {
        const Tensor& gy = g.grad(id);
        Tensor& ga = g.grad(a);
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * m[i];
    };
    return id;
}

int Graph::add_cvec(int a, Tensor c) {
    assert(val(a).same_shape(c));
    Tensor y = val(a);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += c[i];
    int id = push(std::move(y));
    nodes.back().back = [id, a](Graph& g) {
        const Tensor& gy = g.grad(id);
        Tensor& ga = g.grad(a);
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
    };
    return id;
}

int Graph::reshape(int a, std::vector<int> shape) {
    assert(Tensor::count(shape) == val(a).size());
    Tensor y;
    y.shape = std::move(shape);
    y.v = val(a).v;
    int id = push(std::move(y));
    nodes.back().back = [id, a](Graph& g) {
        const Tensor& gy = g.grad(id);
        Tensor& ga = g.grad(a);
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
    };
    return id;
}

int Graph::row(int m, int r) {
    const Tensor& vm = val(m);
    assert(vm.ndim() == 2 && r >= 0 && r < vm.dim(0));
    const int c = vm.dim(1);
    Tensor y({c});
    for (int j = 0; j < c; ++j) y[static_cast<std::size_t>(j)] = vm.at(r, j);
    int id = push(std::move(y));
    nodes.back().back = [id, m, r, c](Graph& g) {
        const Tensor& gy = g.grad(id);
        Tensor& gm = g.grad(m);
        for (int j = 0; j < c; ++j) gm.at(r, j) += gy[static_cast<std::size_t>(j)];
    };
    return id;
}

int Graph::matvec(int w, int x) {
    const Tensor &vw = val(w), &vx = val(x);
    assert(vw.ndim() == 2 && vx.ndim() == 1 && vw.dim(1) == vx.dim(0));
    const int r = vw.dim(0), c = vw.dim(1);
    Tensor y({r});
    for (int i = 0; i < r; ++i) y[static_cast<std::size_t>(i)] = dot(&vw.v[static_cast<std::size_t>(i) * c], vx.data(), static_cast<std::size_t>(c));
    int id = push(std::move(y));
    nodes.back().back = [id, w, x, r, c](Graph& g) {
        const Tensor& gy = g.grad(id);
        const Tensor &vw2 = g.val(w), &vx2 = g.val(x);
        Tensor &gw = g.grad(w), &gx = g.grad(x);
        for (int i = 0; i < r; ++i) {
            const float gi = gy[static_cast<std::size_t>(i)];
            if (gi == 0.0f) continue;
            for (int j = 0; j < c; ++j) {
                gw.at(i, j) += gi * vx2[static_cast<std::size_t>(j)];
                gx[static_cast<std::size_t>(j)] += gi * vw2.at(i, j);
            }
        }
    };
    return id;
}

int Graph::matvec_const(Tensor w, int x) {
    const Tensor& vx = val(x);
    assert(w.ndim() == 2 && vx.ndim() == 1 && w.dim(1) == vx.dim(0));
    const int r = w.dim(0), c = w.dim(1);
    Tensor y({r});
    for (int i = 0; i < r; ++i) y[static_cast<std::size_t>(i)] = dot(&w.v[static_cast<std::size_t>(i) * c], vx.data(), static_cast<std::size_t>(c));
    int id = push(std::move(y));
    nodes.back().back = [id, x, r, c, w = std::move(w)](Graph& g) {
        const Tensor& gy = g.grad(id);
        Tensor& gx = g.grad(x);
        for (int i = 0; i < r; ++i) {
            const float gi = gy[static_cast<std::size_t>(i)];
            if (gi == 0.0f) continue;
            for (int j = 0; j < c; ++j) gx[static_cast<std::size_t>(j)] += gi * w.at(i, j);
        }
    };
    return id;
}

int Graph::linear(int w, int b, int x) {
    int y = matvec(w, x);
    return add(y, b);
}

int Graph::outer(int a, int b) {
    const Tensor &va = val(a), &vb = val(b);
    assert(va.ndim() == 1 && vb.ndim() == 1);
    const int ra = va.dim(0), cb = vb.dim(0);
    Tensor y({ra, cb});
    for (int i = 0; i < ra; ++i)
        for (int j = 0; j < cb; ++j) y.at(i, j) = va[static_cast<std::size_t>(i)] * vb[static_cast<std::size_t>(j)];
    int id = push(std::move(y));
    nodes.back().back = [id, a, b, ra, cb](Graph& g) {
        const Tensor& gy = g.grad(id);
        const Tensor &va2 = g.val(a), &vb2 = g.val(b);
        Tensor &ga = g.grad(a), &gb = g.grad(b);
        for (int i = 0; i < ra; ++i)
            for (int j = 0; j < cb; ++j) {
                const float gij = gy.at(i, j);
                ga[static_cast<std::size_t>(i)] += gij * vb2[static_cast<std::size_t>(j)];
                gb[static_cast<std::size_t>(j)] += gij * va2[static_cast<std::size_t>(i)];
            }
    };
    return id;
}

int Graph::normalize_to(int x, float length) {
    const Tensor& vx = val(x);
    const float nrm = norm2(vx.data(), vx.size());
    Tensor y = vx;
    const float s = length / nrm;  // caller guarantees nonzero input
    for (auto& e : y.v) e *= s;
    int id = push(std::move(y));
    nodes.back().back = [id, x, length, nrm](Graph& g) {
        const Tensor& gy = g.grad(id);
        const Tensor& vx2 = g.val(x);
        Tensor& gx = g.grad(x);
        float gdotx = 0.0f;
        for (std::size_t i = 0; i < gy.size(); ++i) gdotx += gy[i] * vx2[i];
        const float inv = 1.0f / nrm;
        const float k = gdotx * inv * inv;
        for (std::size_t i = 0; i < gy.size(); ++i)
            gx[i] += length * inv * (gy[i] - k * vx2[i]);
    };
    return id;
}

int Graph::normalize_sum(int x) {
    const Tensor& vx = val(x);
    float sum = 0.0f;
    for (float e : vx.v) sum += e;
    Tensor y = vx;
    for (auto& e : y.v) e /= sum;
    int id = push(std::move(y));
    nodes.back().back = [id, x, sum](Graph& g) {
        const Tensor& gy = g.grad(id);
        const Tensor& vy = g.val(id);
        Tensor& gx = g.grad(x);
        float gdoty = 0.0f;
        for (std::size_t i = 0; i < gy.size(); ++i) gdoty += gy[i] * vy[i];
        for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += (gy[i] - gdoty) / sum;
    };
    return id;
}

int Graph::softmax(int x) {
    const Tensor& vx = val(x);
    Tensor y(vx.shape);
    softmax_fwd(vx.data(), y.data(), static_cast<int>(vx.size()));
    int id = push(std::move(y));
    nodes.back().back = [id, x](Graph& g) {
        const Tensor& gy = g.grad(id);
        const Tensor& vy = g.val(id);
        Tensor& gx = g.grad(x);
        float gdoty = 0.0f;
        for (std::size_t i = 0; i < gy.size(); ++i) gdoty += gy[i] * vy[i];
        for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += vy[i] * (gy[i] - gdoty);
    };
    return id;
}

int Graph::sum_all(int a) {
    const Tensor& va = val(a);
    float s = 0.0f;
    for (float e : va.v) s += e;
    int id = push(Tensor::from({1}, {s}));
    nodes.back().back = [id, a](Graph& g) {
        const float gy = g.grad(id)[0];
        Tensor& ga = g.grad(a);
        for (auto& e : ga.v) e += gy;
    };
    return id;
}

int Graph::mean_all(int a) {
    const Tensor& va = val(a);
    float s = 0.0f;
    for (float e : va.v) s += e;
    const float inv = 1.0f / static_cast<float>(va.size());
    int id = push(Tensor::from({1}, {s * inv}));
    nodes.back().back = [id, a, inv](Graph& g) {
        const float gy = g.grad(id)[0] * inv;
        Tensor& ga = g.grad(a);
        for (auto& e : ga.v) e += gy;
    };
    return id;
}

int Graph::max_all(int a) {
    const Tensor& va = val(a);
    std::size_t arg = 0;
    for (std::size_t i = 1; i < va.size(); ++i)
        if (va[i] > va[arg]) arg = i;
    int id = push(Tensor::from({1}, {va[arg]}));
    nodes.back().back = [id, a, arg](Graph& g) { g.grad(a)[arg] += g.grad(id)[0]; };
    return id;
}

int Graph::dot_rows(int a, int b) {
    const Tensor &va = val(a), &vb = val(b);
    assert(va.same_shape(vb) && va.ndim() == 2);
    const int s = va.dim(0), c = va.dim(1);
    Tensor y({s});
    for (int i = 0; i < s; ++i)
        y[static_cast<std::size_t>(i)] =
            dot(&va.v[static_cast<std::size_t>(i) * c], &vb.v[static_cast<std::size_t>(i) * c], static_cast<std::size_t>(c));
    int id = push(std::move(y));
    nodes.back().back = [id, a, b, s, c](Graph& g) {
        const Tensor& gy = g.grad(id);
        const Tensor &va2 = g.val(a), &vb2 = g.val(b);
        Tensor &ga = g.grad(a), &gb = g.grad(b);
        for (int i = 0; i < s; ++i) {
            const float gi = gy[static_cast<std::size_t>(i)];
            if (gi == 0.0f) continue;
            const std::size_t off = static_cast<std::size_t>(i) * c;
            for (int j = 0; j < c; ++j) {
                ga[off + static_cast<std::size_t>(j)] += gi * vb2[off + static_cast<std::size_t>(j)];
                gb[off + static_cast<std::size_t>(j)] += gi * va2[off + static_cast<std::size_t>(j)];
            }
        }
    };
    return id;
}

int Graph::sqnorm_rows(int a) {
    const Tensor& va = val(a);
    assert(va.ndim() == 2);
    const int s = va.dim(0), c = va.dim(1);
    Tensor y({s});
    for (int i = 0; i < s; ++i) {
        const float* p = &va.v[static_cast<std::size_t>(i) * c];
        y[static_cast<std::size_t>(i)] = dot(p, p, static_cast<std::size_t>(c));
    }
    int id = push(std::move(y));
    nodes.back().back = [id, a, s, c](Graph& g) {
        const Tensor& gy = g.grad(id);
        const Tensor& va2 = g.val(a);
        Tensor& ga = g.grad(a);
        for (int i = 0; i < s; ++i) {
            const float gi = 2.0f * gy[static_cast<std::size_t>(i)];
            if (gi == 0.0f) continue;
            const std::size_t off = static_cast<std::size_t>(i) * c;
            for (int j = 0; j < c; ++j) ga[off + static_cast<std::size_t>(j)] += gi * va2[off + static_cast<std::size_t>(j)];
        }
    };
    return id;
}

int Graph::mean_rows(int a) {
    const Tensor& va = val(a);
    assert(va.ndim() == 2);
    const int s = va.dim(0), c = va.dim(1);
    Tensor y({c});
    for (int i = 0; i < s; ++i)
        for (int j = 0; j < c; ++j) y[static_cast<std::size_t>(j)] += va.at(i, j);
    const float inv = 1.0f / static_cast<float>(s);
    for (auto& e : y.v) e *= inv;
    int id = push(std::move(y));
    nodes.back().back = [id, a, s, c, inv](Graph& g) {
        const Tensor& gy = g.grad(id);
        Tensor& ga = g.grad(a);
        for (int i = 0; i < s; ++i)
            for (int j = 0; j < c; ++j) ga.at(i, j) += gy[static_cast<std::size_t>(j)] * inv;
    };
    return id;
}

int Graph::div_by_scalar(int a, int s, float eps) {
    const Tensor& va = val(a);
    const float sv = val(s)[0];
    Tensor y = va;
    const float den = sv + eps;
    for (auto& e : y.v) e /= den;
    int id = push(std::move(y));
    nodes.back().back = [id, a, s, den](Graph& g) {
        const Tensor& gy = g.grad(id);
        const Tensor& va2 = g.val(a);
        Tensor& ga = g.grad(a);
        float acc = 0.0f;
        for (std::size_t i = 0; i < gy.size(); ++i) {
            ga[i] += gy[i] / den;
            acc += gy[i] * va2[i];
        }
        g.grad(s)[0] -= acc / (den * den);
    };
    return id;
}

int Graph::weighted_sum(const std::vector<std::pair<int, float>>& terms) {
    float s = 0.0f;
    for (const auto& [id, w] : terms) {
        assert(val(id).size() == 1);
        s += val(id)[0] * w;
    }
    int id = push(Tensor::from({1}, {s}));
    nodes.back().back = [id, terms](Graph& g) {
        const float gy = g.grad(id)[0];
        for (const auto& [tid, w] : terms) g.grad(tid)[0] += gy * w;
    };
    return id;
}

int Graph::conv2d(int x, int w, int b, int stride, int pad) {
    const Tensor &vx = val(x), &vw = val(w);
    assert(vx.ndim() == 3 && vw.ndim() == 4 && vw.dim(1) == 3 && vw.dim(2) == 3);
    assert(vw.dim(3) == vx.dim(2));
    const int h = vx.dim(0), wd = vx.dim(1), ci = vx.dim(2), co = vw.dim(0);
    const int ho = conv_out(h, stride, pad), wo = conv_out(wd, stride, pad);
    Tensor y({ho, wo, co});
    const float* bias = (b >= 0) ? val(b).data() : nullptr;
    conv2d_fwd(vx.data(), h, wd, ci, vw.data(), co, stride, pad, bias, y.data(), ho, wo);
    int id = push(std::move(y));
    nodes.back().back = [id, x, w, b, stride, pad, h, wd, ci, co, ho, wo](Graph& g) {
        const Tensor& gy = g.grad(id);
        conv2d_bwd_input(gy.data(), ho, wo, co, g.val(w).data(), ci, stride, pad, g.grad(x).data(), h, wd);
        float* db = (b >= 0) ? g.grad(b).data() : nullptr;
        conv2d_bwd_weights(gy.data(), ho, wo, co, g.val(x).data(), h, wd, ci, stride, pad,
                           g.grad(w).data(), db);
    };
    return id;
}

int Graph::conv2d_frozen(int x, Tensor w, int stride, int pad, int pad_mode) {
    const Tensor& vx = val(x);
    assert(vx.ndim() == 3 && w.ndim() == 4 && w.dim(3) == vx.dim(2));
    const int h = vx.dim(0), wd = vx.dim(1), ci = vx.dim(2), co = w.dim(0);
    const int ho = conv_out(h, stride, pad), wo = conv_out(wd, stride, pad);
    Tensor y({ho, wo, co});
    conv2d_fwd(vx.data(), h, wd, ci, w.data(), co, stride, pad, nullptr, y.data(), ho, wo, pad_mode);
    int id = push(std::move(y));
    nodes.back().back = [id, x, stride, pad, pad_mode, h, wd, ci, co, ho, wo, w = std::move(w)](Graph& g) {
        conv2d_bwd_input(g.grad(id).data(), ho, wo, co, w.data(), ci, stride, pad, g.grad(x).data(), h,
                         wd, pad_mode);
    };
    return id;
}

int Graph::upsample2x(int x) {
    const Tensor& vx = val(x);
    assert(vx.ndim() == 3);
    const int h = vx.dim(0), w = vx.dim(1), c = vx.dim(2);
    Tensor y({2 * h, 2 * w, c});
    for (int i = 0; i < 2 * h; ++i)
        for (int j = 0; j < 2 * w; ++j) {
            const float* src = &vx.v[(static_cast<std::size_t>(i / 2) * w + static_cast<std::size_t>(j / 2)) * c];
            float* dst = &y.v[(static_cast<std::size_t>(i) * 2 * w + static_cast<std::size_t>(j)) * c];
            for (int k = 0; k < c; ++k) dst[k] = src[k];
        }
    int id = push(std::move(y));
    nodes.back().back = [id, x, h, w, c](Graph& g) {
        const Tensor& gy = g.grad(id);
        Tensor& gx = g.grad(x);
        for (int i = 0; i < 2 * h; ++i)
            for (int j = 0; j < 2 * w; ++j) {
                const float* src = &gy.v[(static_cast<std::size_t>(i) * 2 * w + static_cast<std::size_t>(j)) * c];
                float* dst = &gx.v[(static_cast<std::size_t>(i / 2) * w + static_cast<std::size_t>(j / 2)) * c];
                for (int k = 0; k < c; ++k) dst[k] += src[k];
            }
    };
    return id;
}

}  // namespace contrafeat::ad
