#include "memtrain/netcore.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "memtrain/kernels.hpp"
#include "memtrain/mapping.hpp"

namespace memtrain {

namespace {

Node conv_node(int input, int out_ch, int k, int stride, int pad) {
    Node n;
    n.kind = OpKind::Conv;
    n.input = input;
    n.out_ch = out_ch;
    n.k = k;
    n.stride = stride;
    n.pad = pad;
    return n;
}

Node simple_node(OpKind kind, int input) {
    Node n;
    n.kind = kind;
    n.input = input;
    return n;
}

Node pool_node(OpKind kind, int input, int k, int s) {
    Node n = simple_node(kind, input);
    n.pool_k = k;
    n.pool_s = s;
    return n;
}

Node fc_node(int input, int out) {
    Node n;
    n.kind = OpKind::Fc;
    n.input = input;
    n.out_ch = out;
    return n;
}

// Assigns parameter ids in node order and resolves output shapes.
void finalize(ModelSpec& m) {
    int next_param = 0;
    for (size_t i = 0; i < m.nodes.size(); ++i) {
        Node& n = m.nodes[i];
        int ci, hi, wi;
        auto in_shape = [&](int id) {
            if (id < 0) {
                ci = m.in_ch;
                hi = m.in_h;
                wi = m.in_w;
            } else {
                ci = m.nodes[id].C;
                hi = m.nodes[id].H;
                wi = m.nodes[id].W;
            }
        };
        in_shape(n.input);
        switch (n.kind) {
        case OpKind::Conv:
            n.fan_in = ci * n.k * n.k;
            n.C = n.out_ch;
            n.H = conv_out_dim(hi, n.k, n.stride, n.pad);
            n.W = conv_out_dim(wi, n.k, n.stride, n.pad);
            if (n.H < 1 || n.W < 1) throw ShapeError("conv output collapsed in " + m.name);
            n.w = next_param++;
            n.b = next_param++;
            break;
        case OpKind::Fc:
            n.fan_in = ci * std::max(hi, 1) * std::max(wi, 1);
            n.C = n.out_ch;
            n.H = 0;
            n.W = 0;
            n.w = next_param++;
            n.b = next_param++;
            break;
        case OpKind::MaxPool:
        case OpKind::AvgPool:
            n.C = ci;
            n.H = (hi - n.pool_k) / n.pool_s + 1;
            n.W = (wi - n.pool_k) / n.pool_s + 1;
            break;
        case OpKind::GlobalAvgPool:
            n.C = ci;
            n.H = 0;
            n.W = 0;
            break;
        case OpKind::BatchNorm:
            n.C = ci;
            n.H = hi;
            n.W = wi;
            n.bn_gamma = next_param++;
            n.bn_beta = next_param++;
            n.bn_mean = next_param++;
            n.bn_var = next_param++;
            break;
        case OpKind::Relu:
            n.C = ci;
            n.H = hi;
            n.W = wi;
            break;
        case OpKind::Add: {
            const Node& other = m.nodes[n.input2];
            if (other.C != ci || other.H != hi || other.W != wi)
                throw ShapeError("residual add shape mismatch in " + m.name);
            n.C = ci;
            n.H = hi;
            n.W = wi;
            break;
        }
        }
    }
}

// conv-bn-relu-conv-bn plus shortcut, then relu.
int basic_block(ModelSpec& m, int input, int in_ch, int out_ch, int stride) {
    auto push = [&](Node n) {
        m.nodes.push_back(n);
        return static_cast<int>(m.nodes.size()) - 1;
    };
    int x = push(conv_node(input, out_ch, 3, stride, 1));
    x = push(simple_node(OpKind::BatchNorm, x));
    x = push(simple_node(OpKind::Relu, x));
    x = push(conv_node(x, out_ch, 3, 1, 1));
    x = push(simple_node(OpKind::BatchNorm, x));
    int shortcut = input;
    if (stride != 1 || in_ch != out_ch) {
        shortcut = push(conv_node(input, out_ch, 1, stride, 0));
        shortcut = push(simple_node(OpKind::BatchNorm, shortcut));
    }
    Node add = simple_node(OpKind::Add, x);
    add.input2 = shortcut;
    x = push(add);
    return push(simple_node(OpKind::Relu, x));
}

} // namespace

void resolve_model(ModelSpec& model) { finalize(model); }

ModelSpec build_lenet() {
    ModelSpec m;
    m.name = "lenet";
    m.in_ch = 1;
    m.in_h = 28;
    m.in_w = 28;
    m.classes = 10;
    auto push = [&](Node n) {
        m.nodes.push_back(n);
        return static_cast<int>(m.nodes.size()) - 1;
    };
    int x = push(conv_node(-1, 8, 5, 1, 0));
    x = push(simple_node(OpKind::Relu, x));
    x = push(pool_node(OpKind::MaxPool, x, 3, 2));
    x = push(conv_node(x, 10, 4, 1, 0));
    x = push(simple_node(OpKind::Relu, x));
    x = push(pool_node(OpKind::MaxPool, x, 2, 2));
    push(fc_node(x, 10));
    finalize(m);
    return m;
}

ModelSpec build_vgg8() {
    ModelSpec m;
    m.name = "vgg8";
    m.in_ch = 3;
    m.in_h = 32;
    m.in_w = 32;
    m.classes = 10;
    auto push = [&](Node n) {
        m.nodes.push_back(n);
        return static_cast<int>(m.nodes.size()) - 1;
    };
    int x = -1;
    for (int stage = 0; stage < 3; ++stage) {
        const int ch = 32 << stage;
        for (int i = 0; i < 2; ++i) {
            x = push(conv_node(x, ch, 3, 1, 1));
            x = push(simple_node(OpKind::BatchNorm, x));
            x = push(simple_node(OpKind::Relu, x));
        }
        x = push(pool_node(OpKind::MaxPool, x, 2, 2));
    }
    x = push(fc_node(x, 128));
    x = push(simple_node(OpKind::Relu, x));
    push(fc_node(x, 10));
    finalize(m);
    return m;
}

ModelSpec build_resnet18() {
    ModelSpec m;
    m.name = "resnet18";
    m.in_ch = 3;
    m.in_h = 32;
    m.in_w = 32;
    m.classes = 10;
    auto push = [&](Node n) {
        m.nodes.push_back(n);
        return static_cast<int>(m.nodes.size()) - 1;
    };
    int x = push(conv_node(-1, 64, 3, 1, 1));
    x = push(simple_node(OpKind::BatchNorm, x));
    x = push(simple_node(OpKind::Relu, x));
    int ch = 64;
    const int stage_ch[4] = {64, 128, 256, 512};
    for (int s = 0; s < 4; ++s) {
        const int stride = (s == 0) ? 1 : 2;
        x = basic_block(m, x, ch, stage_ch[s], stride);
        x = basic_block(m, x, stage_ch[s], stage_ch[s], 1);
        ch = stage_ch[s];
    }
    x = push(simple_node(OpKind::GlobalAvgPool, x));
    push(fc_node(x, 10));
    finalize(m);
    return m;
}

ModelSpec build_model(const std::string& name) {
    if (name == "lenet") return build_lenet();
    if (name == "vgg8") return build_vgg8();
    if (name == "resnet18") return build_resnet18();
    throw ConfigError("unknown model '" + name + "' (expected lenet, vgg8 or resnet18)");
}

ParamSet init_params(const ModelSpec& model, StreamKey key) {
    ParamSet p;
    int pi = 0;
    for (size_t i = 0; i < model.nodes.size(); ++i) {
        const Node& n = model.nodes[i];
        const std::string tag = std::to_string(i);
        if (n.kind == OpKind::Conv || n.kind == OpKind::Fc) {
            Tensor w({n.fan_in, n.out_ch});
            Rng rng = key.sub(streams::kWeightInit, i).rng();
            const double bound = std::sqrt(6.0 / n.fan_in);
            for (size_t j = 0; j < w.numel(); ++j)
                w[j] = static_cast<float>(rng.uniform(-bound, bound));
            pi = p.add("node" + tag + ".weight", std::move(w), true);
            (void)pi;
            p.add("node" + tag + ".bias", Tensor({n.out_ch}), true);
        } else if (n.kind == OpKind::BatchNorm) {
            p.add("node" + tag + ".bn_gamma", Tensor({n.C}, 1.0f), true);
            p.add("node" + tag + ".bn_beta", Tensor({n.C}), true);
            p.add("node" + tag + ".bn_mean", Tensor({n.C}), false);
            p.add("node" + tag + ".bn_var", Tensor({n.C}, 1.0f), false);
        }
    }
    return p;
}

long count_weights(const ModelSpec& model) {
    long total = 0;
    for (const Node& n : model.nodes)
        if (n.kind == OpKind::Conv || n.kind == OpKind::Fc)
            total += static_cast<long>(n.fan_in) * n.out_ch;
    return total;
}

std::vector<LayerGeom> layer_geometry(const ModelSpec& model) {
    std::vector<LayerGeom> out;
    for (size_t i = 0; i < model.nodes.size(); ++i) {
        const Node& n = model.nodes[i];
        if (n.kind == OpKind::Conv) {
            out.push_back({static_cast<int>(i), n.fan_in, n.out_ch, n.H * n.W, n.k * n.k});
        } else if (n.kind == OpKind::Fc) {
            out.push_back({static_cast<int>(i), n.fan_in, n.out_ch, 1, 1});
        }
    }
    return out;
}

RefExec::RefExec(const ModelSpec& model, const ParamSet& params, bool fake_quant, int quant_levels)
    : model_(model), params_(params), fake_quant_(fake_quant), quant_levels_(quant_levels) {
    qw_.resize(model.nodes.size());
}

Tensor RefExec::run(int node, const Tensor& rows) {
    const Node& n = model_.nodes[static_cast<size_t>(node)];
    const Tensor* w = &params_[n.w];
    if (fake_quant_) {
        double clip = 0.0;
        for (size_t i = 0; i < w->numel(); ++i)
            clip = std::max(clip, std::abs(static_cast<double>((*w)[i])));
        if (clip == 0.0) clip = 1.0;
        qw_[static_cast<size_t>(node)] = fake_quantize(*w, quant_levels_, clip);
        w = &qw_[static_cast<size_t>(node)];
    }
    Tensor out({rows.dim(0), n.out_ch});
    kern::gemm_nn(rows.ptr(), w->ptr(), out.ptr(), rows.dim(0), n.fan_in, n.out_ch, false);
    return out;
}

const Tensor& RefExec::backward_weight(int node) {
    const Node& n = model_.nodes[static_cast<size_t>(node)];
    if (fake_quant_ && qw_[static_cast<size_t>(node)].numel() > 0)
        return qw_[static_cast<size_t>(node)];
    return params_[n.w];
}

Tensor forward(const ModelSpec& model, ParamSet& params, const Tensor& x, LinearExec& exec,
               BatchCache& cache, bool training) {
    const int n_nodes = static_cast<int>(model.nodes.size());
    const int n = x.dim(0);
    cache.n = n;
    cache.training = training;
    cache.out.assign(n_nodes, Tensor());
    cache.eff_in.assign(n_nodes, Tensor());
    cache.argmax.assign(n_nodes, {});
    cache.bn_xhat.assign(n_nodes, Tensor());
    cache.bn_mean.assign(n_nodes, Tensor());
    cache.bn_istd.assign(n_nodes, Tensor());

    for (int idx = 0; idx < n_nodes; ++idx) {
        const Node& nd = model.nodes[static_cast<size_t>(idx)];
        const Tensor& in = nd.input < 0 ? x : cache.out[nd.input];
        int ci = nd.input < 0 ? model.in_ch : model.nodes[nd.input].C;
        int hi = nd.input < 0 ? model.in_h : model.nodes[nd.input].H;
        int wi = nd.input < 0 ? model.in_w : model.nodes[nd.input].W;

        switch (nd.kind) {
        case OpKind::Conv: {
            const Tensor* src = &in;
            Tensor eff;
            if (exec.preprocess(idx, in, eff)) {
                cache.eff_in[idx] = std::move(eff);
                src = &cache.eff_in[idx];
            }
            const int pos = nd.H * nd.W;
            Tensor rows({n * pos, nd.fan_in});
            for (int i = 0; i < n; ++i)
                kern::im2col_into(src->ptr() + static_cast<size_t>(i) * ci * hi * wi, ci, hi, wi,
                                  nd.k, nd.stride, nd.pad,
                                  rows.ptr() + static_cast<size_t>(i) * pos * nd.fan_in);
            Tensor lin = exec.run(idx, rows);
            // scatter [n*pos, out_ch] -> [n, out_ch, H, W] and add bias
            Tensor out({n, nd.C, nd.H, nd.W});
            const float* bias = params[nd.b].ptr();
            for (int i = 0; i < n; ++i) {
                const float* lp = lin.ptr() + static_cast<size_t>(i) * pos * nd.out_ch;
                float* op = out.ptr() + static_cast<size_t>(i) * nd.C * pos;
                for (int p = 0; p < pos; ++p)
                    for (int oc = 0; oc < nd.out_ch; ++oc)
                        op[static_cast<size_t>(oc) * pos + p] = lp[static_cast<size_t>(p) * nd.out_ch + oc] + bias[oc];
            }
            cache.out[idx] = std::move(out);
            break;
        }
        case OpKind::Fc: {
            const Tensor* src = &in;
            Tensor eff;
            if (exec.preprocess(idx, in, eff)) {
                cache.eff_in[idx] = std::move(eff);
                src = &cache.eff_in[idx];
            }
            Tensor rows({n, nd.fan_in});
            std::memcpy(rows.ptr(), src->ptr(), sizeof(float) * rows.numel());
            Tensor lin = exec.run(idx, rows);
            Tensor out({n, nd.out_ch});
            const float* bias = params[nd.b].ptr();
            for (int i = 0; i < n; ++i)
                for (int oc = 0; oc < nd.out_ch; ++oc)
                    out[static_cast<size_t>(i) * nd.out_ch + oc] =
                        lin[static_cast<size_t>(i) * nd.out_ch + oc] + bias[oc];
            cache.out[idx] = std::move(out);
            break;
        }
        case OpKind::Relu: {
            Tensor out(in.shape);
            for (size_t i = 0; i < in.numel(); ++i) out[i] = in[i] > 0.0f ? in[i] : 0.0f;
            cache.out[idx] = std::move(out);
            break;
        }
        case OpKind::MaxPool: {
            Tensor out({n, nd.C, nd.H, nd.W});
            cache.argmax[idx].assign(out.numel(), 0);
            for (int i = 0; i < n; ++i)
                kern::maxpool_fwd(in.ptr() + static_cast<size_t>(i) * ci * hi * wi, ci, hi, wi,
                                  nd.pool_k, nd.pool_s,
                                  out.ptr() + static_cast<size_t>(i) * nd.C * nd.H * nd.W,
                                  cache.argmax[idx].data() + static_cast<size_t>(i) * nd.C * nd.H * nd.W);
            cache.out[idx] = std::move(out);
            break;
        }
        case OpKind::AvgPool: {
            Tensor out({n, nd.C, nd.H, nd.W});
            for (int i = 0; i < n; ++i)
                kern::avgpool_fwd(in.ptr() + static_cast<size_t>(i) * ci * hi * wi, ci, hi, wi,
                                  nd.pool_k, nd.pool_s,
                                  out.ptr() + static_cast<size_t>(i) * nd.C * nd.H * nd.W);
            cache.out[idx] = std::move(out);
            break;
        }
        case OpKind::GlobalAvgPool: {
            Tensor out({n, nd.C});
            const int hw = hi * wi;
            for (int i = 0; i < n; ++i)
                for (int c = 0; c < ci; ++c) {
                    const float* sp = in.ptr() + (static_cast<size_t>(i) * ci + c) * hw;
                    float acc = 0.0f;
                    for (int j = 0; j < hw; ++j) acc += sp[j];
                    out[static_cast<size_t>(i) * ci + c] = acc / static_cast<float>(hw);
                }
            cache.out[idx] = std::move(out);
            break;
        }
        case OpKind::BatchNorm: {
            const int hw = std::max(hi, 1) * std::max(wi, 1);
            const size_t stride_c = static_cast<size_t>(hw);
            const size_t stride_n = static_cast<size_t>(ci) * hw;
            Tensor out(in.shape);
            Tensor xhat(in.shape);
            Tensor mean({ci}), istd({ci});
            float* rm = params[nd.bn_mean].ptr();
            float* rv = params[nd.bn_var].ptr();
            const float* gamma = params[nd.bn_gamma].ptr();
            const float* beta = params[nd.bn_beta].ptr();
            const double m_count = static_cast<double>(n) * hw;
            constexpr double kEps = 1e-5;
            constexpr double kMomentum = 0.1;
            for (int c = 0; c < ci; ++c) {
                double mu, var;
                if (training) {
                    double s = 0.0, s2 = 0.0;
                    for (int i = 0; i < n; ++i) {
                        const float* sp = in.ptr() + i * stride_n + c * stride_c;
                        for (int j = 0; j < hw; ++j) {
                            s += sp[j];
                            s2 += static_cast<double>(sp[j]) * sp[j];
                        }
                    }
                    mu = s / m_count;
                    var = std::max(s2 / m_count - mu * mu, 0.0);
                    rm[c] = static_cast<float>((1.0 - kMomentum) * rm[c] + kMomentum * mu);
                    rv[c] = static_cast<float>((1.0 - kMomentum) * rv[c] + kMomentum * var);
                } else {
                    mu = rm[c];
                    var = rv[c];
                }
                const double is = 1.0 / std::sqrt(var + kEps);
                mean[static_cast<size_t>(c)] = static_cast<float>(mu);
                istd[static_cast<size_t>(c)] = static_cast<float>(is);
                const float g = gamma[c], bt = beta[c];
                for (int i = 0; i < n; ++i) {
                    const float* sp = in.ptr() + i * stride_n + c * stride_c;
                    float* xp = xhat.ptr() + i * stride_n + c * stride_c;
                    float* op = out.ptr() + i * stride_n + c * stride_c;
                    for (int j = 0; j < hw; ++j) {
                        const float xh = static_cast<float>((sp[j] - mu) * is);
                        xp[j] = xh;
                        op[j] = g * xh + bt;
                    }
                }
            }
            cache.bn_xhat[idx] = std::move(xhat);
            cache.bn_mean[idx] = std::move(mean);
            cache.bn_istd[idx] = std::move(istd);
            cache.out[idx] = std::move(out);
            break;
        }
        case OpKind::Add: {
            const Tensor& in2 = cache.out[nd.input2];
            Tensor out(in.shape);
            for (size_t i = 0; i < in.numel(); ++i) out[i] = in[i] + in2[i];
            cache.out[idx] = std::move(out);
            break;
        }
        }
    }
    return cache.out[static_cast<size_t>(model.out_node())];
}

void backward(const ModelSpec& model, const ParamSet& params, const BatchCache& cache,
              const Tensor& x, const Tensor& dlogits, LinearExec& exec, Gradients& grads,
              const std::function<void(int node, const Tensor& dout)>& alpha_grad_hook) {
    const int n_nodes = static_cast<int>(model.nodes.size());
    const int n = cache.n;

    grads.g.assign(params.tensors.size(), Tensor());
    for (size_t i = 0; i < params.tensors.size(); ++i)
        if (params.trainable[i]) grads.g[i] = Tensor(params.tensors[i].shape);
    grads.dx = Tensor(x.shape);
    grads.dnode_out.assign(n_nodes, Tensor());

    auto grad_of = [&](int idx) -> Tensor& {
        Tensor& g = grads.dnode_out[static_cast<size_t>(idx)];
        if (g.numel() == 0) g = Tensor(cache.out[static_cast<size_t>(idx)].shape);
        return g;
    };
    grad_of(model.out_node()).data = dlogits.data;

    auto add_into = [&](int producer, const Tensor& delta) {
        if (producer < 0) {
            for (size_t i = 0; i < delta.numel(); ++i) grads.dx[i] += delta[i];
        } else {
            Tensor& g = grad_of(producer);
            for (size_t i = 0; i < delta.numel(); ++i) g[i] += delta[i];
        }
    };

    for (int idx = n_nodes - 1; idx >= 0; --idx) {
        const Node& nd = model.nodes[static_cast<size_t>(idx)];
        const Tensor& dout = grads.dnode_out[static_cast<size_t>(idx)];
        if (dout.numel() == 0) continue; // node not on any path to the loss
        const Tensor& in = nd.input < 0 ? x : cache.out[nd.input];
        const Tensor& in_eff =
            cache.eff_in[static_cast<size_t>(idx)].numel() > 0 ? cache.eff_in[static_cast<size_t>(idx)] : in;
        int ci = nd.input < 0 ? model.in_ch : model.nodes[nd.input].C;
        int hi = nd.input < 0 ? model.in_h : model.nodes[nd.input].H;
        int wi = nd.input < 0 ? model.in_w : model.nodes[nd.input].W;

        switch (nd.kind) {
        case OpKind::Conv: {
            const int pos = nd.H * nd.W;
            // gather dout [n, oc, pos] -> rows [n*pos, oc]
            Tensor drows({n * pos, nd.out_ch});
            for (int i = 0; i < n; ++i) {
                const float* dp = dout.ptr() + static_cast<size_t>(i) * nd.C * pos;
                float* rp = drows.ptr() + static_cast<size_t>(i) * pos * nd.out_ch;
                for (int p = 0; p < pos; ++p)
                    for (int oc = 0; oc < nd.out_ch; ++oc)
                        rp[static_cast<size_t>(p) * nd.out_ch + oc] = dp[static_cast<size_t>(oc) * pos + p];
            }
            if (alpha_grad_hook) alpha_grad_hook(idx, drows);
            // bias grad
            if (params.trainable[static_cast<size_t>(nd.b)]) {
                float* db = grads.g[static_cast<size_t>(nd.b)].ptr();
                for (int r = 0; r < n * pos; ++r)
                    for (int oc = 0; oc < nd.out_ch; ++oc)
                        db[oc] += drows[static_cast<size_t>(r) * nd.out_ch + oc];
            }
            // dW = im2col(in_eff)^T * drows, accumulated sample by sample
            Tensor rows({pos, nd.fan_in});
            float* dw = grads.g[static_cast<size_t>(nd.w)].ptr();
            for (int i = 0; i < n; ++i) {
                kern::im2col_into(in_eff.ptr() + static_cast<size_t>(i) * ci * hi * wi, ci, hi, wi,
                                  nd.k, nd.stride, nd.pad, rows.ptr());
                kern::gemm_tn(rows.ptr(), drows.ptr() + static_cast<size_t>(i) * pos * nd.out_ch,
                              dw, nd.fan_in, pos, nd.out_ch, true);
            }
            // dX = col2im(drows * W^T); straight-through across the input quantizer
            const Tensor& wb = exec.backward_weight(idx);
            Tensor dcols({pos, nd.fan_in});
            Tensor din({1, ci, hi, wi});
            for (int i = 0; i < n; ++i) {
                kern::gemm_nt(drows.ptr() + static_cast<size_t>(i) * pos * nd.out_ch, wb.ptr(),
                              dcols.ptr(), pos, nd.out_ch, nd.fan_in, false);
                din.fill(0.0f);
                kern::col2im_into(dcols.ptr(), ci, hi, wi, nd.k, nd.stride, nd.pad, din.ptr());
                if (nd.input < 0) {
                    float* dst = grads.dx.ptr() + static_cast<size_t>(i) * ci * hi * wi;
                    for (size_t j = 0; j < din.numel(); ++j) dst[j] += din[j];
                } else {
                    Tensor& g = grad_of(nd.input);
                    float* dst = g.ptr() + static_cast<size_t>(i) * ci * hi * wi;
                    for (size_t j = 0; j < din.numel(); ++j) dst[j] += din[j];
                }
            }
            break;
        }
        case OpKind::Fc: {
            if (alpha_grad_hook) alpha_grad_hook(idx, dout);
            if (params.trainable[static_cast<size_t>(nd.b)]) {
                float* db = grads.g[static_cast<size_t>(nd.b)].ptr();
                for (int i = 0; i < n; ++i)
                    for (int oc = 0; oc < nd.out_ch; ++oc)
                        db[oc] += dout[static_cast<size_t>(i) * nd.out_ch + oc];
            }
            kern::gemm_tn(in_eff.ptr(), dout.ptr(), grads.g[static_cast<size_t>(nd.w)].ptr(),
                          nd.fan_in, n, nd.out_ch, true);
            const Tensor& wb = exec.backward_weight(idx);
            Tensor din({n, nd.fan_in});
            kern::gemm_nt(dout.ptr(), wb.ptr(), din.ptr(), n, nd.out_ch, nd.fan_in, false);
            add_into(nd.input, din);
            break;
        }
        case OpKind::Relu: {
            const Tensor& out = cache.out[static_cast<size_t>(idx)];
            Tensor din(out.shape);
            for (size_t i = 0; i < out.numel(); ++i) din[i] = out[i] > 0.0f ? dout[i] : 0.0f;
            add_into(nd.input, din);
            break;
        }
        case OpKind::MaxPool: {
            Tensor din({n, ci, hi, wi});
            for (int i = 0; i < n; ++i)
                kern::maxpool_bwd(dout.ptr() + static_cast<size_t>(i) * nd.C * nd.H * nd.W, ci,
                                  nd.H, nd.W,
                                  cache.argmax[static_cast<size_t>(idx)].data() +
                                      static_cast<size_t>(i) * nd.C * nd.H * nd.W,
                                  din.ptr() + static_cast<size_t>(i) * ci * hi * wi);
            add_into(nd.input, din);
            break;
        }
        case OpKind::AvgPool: {
            Tensor din({n, ci, hi, wi});
            for (int i = 0; i < n; ++i)
                kern::avgpool_bwd(dout.ptr() + static_cast<size_t>(i) * nd.C * nd.H * nd.W, ci, hi,
                                  wi, nd.pool_k, nd.pool_s,
                                  din.ptr() + static_cast<size_t>(i) * ci * hi * wi);
            add_into(nd.input, din);
            break;
        }
        case OpKind::GlobalAvgPool: {
            const int hw = hi * wi;
            Tensor din({n, ci, hi, wi});
            const float inv = 1.0f / static_cast<float>(hw);
            for (int i = 0; i < n; ++i)
                for (int c = 0; c < ci; ++c) {
                    const float g = dout[static_cast<size_t>(i) * ci + c] * inv;
                    float* dp = din.ptr() + (static_cast<size_t>(i) * ci + c) * hw;
                    for (int j = 0; j < hw; ++j) dp[j] = g;
                }
            add_into(nd.input, din);
            break;
        }
        case OpKind::BatchNorm: {
            const int hw = std::max(hi, 1) * std::max(wi, 1);
            const size_t stride_n = static_cast<size_t>(ci) * hw;
            const Tensor& xhat = cache.bn_xhat[static_cast<size_t>(idx)];
            const Tensor& istd = cache.bn_istd[static_cast<size_t>(idx)];
            const float* gamma = params[nd.bn_gamma].ptr();
            float* dgamma = grads.g[static_cast<size_t>(nd.bn_gamma)].ptr();
            float* dbeta = grads.g[static_cast<size_t>(nd.bn_beta)].ptr();
            Tensor din(in.shape);
            const double m_count = static_cast<double>(n) * hw;
            for (int c = 0; c < ci; ++c) {
                double sum_d = 0.0, sum_dx = 0.0;
                for (int i = 0; i < n; ++i) {
                    const float* dp = dout.ptr() + i * stride_n + static_cast<size_t>(c) * hw;
                    const float* xp = xhat.ptr() + i * stride_n + static_cast<size_t>(c) * hw;
                    for (int j = 0; j < hw; ++j) {
                        sum_d += dp[j];
                        sum_dx += static_cast<double>(dp[j]) * xp[j];
                    }
                }
                dgamma[c] += static_cast<float>(sum_dx);
                dbeta[c] += static_cast<float>(sum_d);
                if (cache.training) {
                    const double gi = gamma[c] * static_cast<double>(istd[static_cast<size_t>(c)]);
                    const double mean_d = sum_d / m_count;
                    const double mean_dx = sum_dx / m_count;
                    for (int i = 0; i < n; ++i) {
                        const float* dp = dout.ptr() + i * stride_n + static_cast<size_t>(c) * hw;
                        const float* xp = xhat.ptr() + i * stride_n + static_cast<size_t>(c) * hw;
                        float* op = din.ptr() + i * stride_n + static_cast<size_t>(c) * hw;
                        for (int j = 0; j < hw; ++j)
                            op[j] = static_cast<float>(gi * (dp[j] - mean_d - xp[j] * mean_dx));
                    }
                } else {
                    const double gi = gamma[c] * static_cast<double>(istd[static_cast<size_t>(c)]);
                    for (int i = 0; i < n; ++i) {
                        const float* dp = dout.ptr() + i * stride_n + static_cast<size_t>(c) * hw;
                        float* op = din.ptr() + i * stride_n + static_cast<size_t>(c) * hw;
                        for (int j = 0; j < hw; ++j) op[j] = static_cast<float>(gi * dp[j]);
                    }
                }
            }
            add_into(nd.input, din);
            break;
        }
        case OpKind::Add: {
            add_into(nd.input, dout);
            add_into(nd.input2, dout);
            break;
        }
        }
    }
}

Tensor fake_quantize(const Tensor& w, int n_levels, double clip) {
    if (n_levels < 2) throw ConfigError("fake_quantize: n_levels must be >= 2");
    if (!(clip > 0.0)) throw ConfigError("fake_quantize: clip must be > 0");
    const double step = 2.0 * clip / (n_levels - 1);
    Tensor out(w.shape);
    for (size_t i = 0; i < w.numel(); ++i) {
        const double c = std::clamp(static_cast<double>(w[i]), -clip, clip);
        out[i] = static_cast<float>(std::round(c / step) * step);
    }
    return out;
}

std::pair<double, std::vector<float>> cross_entropy(const std::vector<float>& logits, int label) {
    if (label < 0 || label >= static_cast<int>(logits.size()))
        throw LabelOutOfRange("cross_entropy: label " + std::to_string(label) + " out of range");
    const float mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (float v : logits) sum += std::exp(static_cast<double>(v) - mx);
    const double log_sum = std::log(sum) + mx;
    const double loss = log_sum - logits[static_cast<size_t>(label)];
    std::vector<float> dlogits(logits.size());
    for (size_t i = 0; i < logits.size(); ++i) {
        const double p = std::exp(static_cast<double>(logits[i]) - log_sum);
        dlogits[i] = static_cast<float>(p - (static_cast<int>(i) == label ? 1.0 : 0.0));
    }
    return {loss, std::move(dlogits)};
}

double cross_entropy_batch(const Tensor& logits, const std::vector<uint8_t>& labels,
                           Tensor& dlogits) {
    const int n = logits.dim(0);
    const int classes = logits.dim(1);
    if (static_cast<size_t>(n) != labels.size())
        throw DimensionMismatch("cross_entropy_batch: labels/logits count mismatch");
    dlogits = Tensor(logits.shape);
    double total = 0.0;
    const float inv_n = 1.0f / static_cast<float>(n);
    for (int i = 0; i < n; ++i) {
        std::vector<float> row(logits.ptr() + static_cast<size_t>(i) * classes,
                               logits.ptr() + static_cast<size_t>(i + 1) * classes);
        auto [loss, dl] = cross_entropy(row, labels[static_cast<size_t>(i)]);
        total += loss;
        for (int c = 0; c < classes; ++c)
            dlogits[static_cast<size_t>(i) * classes + c] = dl[static_cast<size_t>(c)] * inv_n;
    }
    return total / n;
}

void AdamW::ensure_state(const ParamSet& params) {
    if (!m.empty()) return;
    m.resize(params.tensors.size());
    v.resize(params.tensors.size());
    for (size_t i = 0; i < params.tensors.size(); ++i) {
        if (!params.trainable[i]) continue;
        m[i] = Tensor(params.tensors[i].shape);
        v[i] = Tensor(params.tensors[i].shape);
    }
}

std::vector<Tensor> AdamW::step(const ParamSet& params, const std::vector<Tensor>& grads) {
    ensure_state(params);
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    std::vector<Tensor> deltas(params.tensors.size());
    for (size_t i = 0; i < params.tensors.size(); ++i) {
        if (!params.trainable[i]) continue;
        const Tensor& w = params.tensors[i];
        const Tensor& g = grads[i];
        Tensor d(w.shape);
        float* mp = m[i].ptr();
        float* vp = v[i].ptr();
        for (size_t j = 0; j < w.numel(); ++j) {
            const double gj = g[j];
            mp[j] = static_cast<float>(beta1 * mp[j] + (1.0 - beta1) * gj);
            vp[j] = static_cast<float>(beta2 * vp[j] + (1.0 - beta2) * gj * gj);
            const double mhat = mp[j] / bc1;
            const double vhat = vp[j] / bc2;
            d[j] = static_cast<float>(-lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * w[j]));
        }
        deltas[i] = std::move(d);
    }
    return deltas;
}

namespace {
void put_u32_le(std::ostream& out, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
}
uint32_t get_u32_le(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}
} // namespace

void save_tensors(const std::string& path, const std::vector<std::string>& names,
                  const std::vector<Tensor>& tensors) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("cannot open " + path + " for writing");
    put_u32_le(out, static_cast<uint32_t>(tensors.size()));
    for (size_t i = 0; i < tensors.size(); ++i) {
        put_u32_le(out, static_cast<uint32_t>(names[i].size()));
        out.write(names[i].data(), static_cast<std::streamsize>(names[i].size()));
        put_u32_le(out, static_cast<uint32_t>(tensors[i].shape.size()));
        for (int d : tensors[i].shape) put_u32_le(out, static_cast<uint32_t>(d));
        out.write(reinterpret_cast<const char*>(tensors[i].ptr()),
                  static_cast<std::streamsize>(tensors[i].numel() * sizeof(float)));
    }
    if (!out) throw CheckpointError("short write to " + path);
}

void load_tensors(const std::string& path, std::vector<std::string>& names,
                  std::vector<Tensor>& tensors) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open " + path);
    const uint32_t count = get_u32_le(in);
    if (!in) throw CheckpointError(path + ": truncated header");
    names.clear();
    tensors.clear();
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t name_len = get_u32_le(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const uint32_t ndim = get_u32_le(in);
        std::vector<int> shape(ndim);
        for (uint32_t d = 0; d < ndim; ++d) shape[d] = static_cast<int>(get_u32_le(in));
        Tensor t(shape);
        in.read(reinterpret_cast<char*>(t.ptr()),
                static_cast<std::streamsize>(t.numel() * sizeof(float)));
        if (!in) throw CheckpointError(path + ": truncated tensor '" + name + "'");
        names.push_back(std::move(name));
        tensors.push_back(std::move(t));
    }
}

} // namespace memtrain
