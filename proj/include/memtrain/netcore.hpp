#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "memtrain/rng.hpp"
#include "memtrain/tensor.hpp"

namespace memtrain {

// Minimal dense-tensor network engine: the digital half of the hybrid
// system. Three fixed topologies (LeNet, VGG-8, ResNet-18) are expressed as
// an explicit node graph with hand-written backward passes.

enum class OpKind { Conv, Fc, Relu, MaxPool, AvgPool, GlobalAvgPool, BatchNorm, Add };

struct Node {
    OpKind kind{};
    int input = -1;  // producer node id; -1 = network input
    int input2 = -1; // second producer (Add)

    // conv / fc
    int out_ch = 0;
    int k = 0, stride = 1, pad = 0;
    int w = -1, b = -1; // param ids (weight matrix [fan_in x out], bias [out])

    // pool
    int pool_k = 0, pool_s = 0;

    // batchnorm param ids
    int bn_gamma = -1, bn_beta = -1, bn_mean = -1, bn_var = -1;

    // resolved per-sample output shape
    int C = 0, H = 0, W = 0;
    int fan_in = 0; // conv: C_in*k*k, fc: flattened input size
};

struct ModelSpec {
    std::string name;
    int in_ch = 1, in_h = 28, in_w = 28;
    int classes = 10;
    std::vector<Node> nodes;

    int out_node() const { return static_cast<int>(nodes.size()) - 1; }
};

struct ParamSet {
    std::vector<std::string> names;
    std::vector<Tensor> tensors;
    std::vector<bool> trainable;

    int add(const std::string& name, Tensor t, bool train) {
        names.push_back(name);
        tensors.push_back(std::move(t));
        trainable.push_back(train);
        return static_cast<int>(tensors.size()) - 1;
    }
    Tensor& operator[](int i) { return tensors[static_cast<size_t>(i)]; }
    const Tensor& operator[](int i) const { return tensors[static_cast<size_t>(i)]; }
    int size() const { return static_cast<int>(tensors.size()); }
};

// Model builders. Shapes are resolved at build time; ParamSet layout is
// fixed by node order.
ModelSpec build_lenet();
ModelSpec build_vgg8();
ModelSpec build_resnet18();
ModelSpec build_model(const std::string& name);

// Assign parameter ids and resolve output shapes of a hand-built node list.
void resolve_model(ModelSpec& model);

// Kaiming-uniform initialization of all conv/fc weights (fan-in scaling),
// zero biases, unit gamma / zero beta for batchnorm.
ParamSet init_params(const ModelSpec& model, StreamKey key);

// Conv + fc kernel element count (the weights that live on devices).
long count_weights(const ModelSpec& model);

// Geometry of the mapped layers, in node order.
struct LayerGeom {
    int node = -1;
    int fan_in = 0;
    int fan_out = 0;
    int positions = 0; // sliding positions per image (1 for fc)
    int row_block = 1; // k*k for conv, 1 for fc
};
std::vector<LayerGeom> layer_geometry(const ModelSpec& model);

// How the linear ops inside forward() are evaluated. The reference executor
// multiplies with the stored (optionally fake-quantized) weights; the
// trainer installs a CIM executor that routes rows through the crossbars.
class LinearExec {
public:
    virtual ~LinearExec() = default;
    // Optional elementwise transform of the layer input (the CIM path
    // returns the quantize-dequantize image of x). Return false to use x as is.
    virtual bool preprocess(int /*node*/, const Tensor& /*x*/, Tensor& /*x_eff*/) { return false; }
    // rows: [n_rows x fan_in] activation matrix; returns [n_rows x fan_out].
    virtual Tensor run(int node, const Tensor& rows) = 0;
    // Weight matrix to backpropagate through for this node.
    virtual const Tensor& backward_weight(int node) = 0;
};

// Plain FP32 executor over a ParamSet; optionally applies straight-through
// fake quantization to the weights in the value path (QAT baseline).
class RefExec : public LinearExec {
public:
    RefExec(const ModelSpec& model, const ParamSet& params, bool fake_quant = false,
            int quant_levels = 16);
    Tensor run(int node, const Tensor& rows) override;
    const Tensor& backward_weight(int node) override;

private:
    const ModelSpec& model_;
    const ParamSet& params_;
    bool fake_quant_;
    int quant_levels_;
    std::vector<Tensor> qw_; // per node: quantized weights of the last forward
};

struct BatchCache {
    int n = 0;
    bool training = false;
    std::vector<Tensor> out;                  // per node: [n, ...] outputs
    std::vector<Tensor> eff_in;               // per node: preprocessed input (may be empty)
    std::vector<std::vector<int32_t>> argmax; // per maxpool node
    std::vector<Tensor> bn_xhat;              // per bn node
    std::vector<Tensor> bn_mean, bn_istd;     // per bn node: batch stats used
};

// Full forward pass. x: [n, C, H, W]. Returns logits [n, classes] (also the
// last node's cache entry). training toggles batchnorm statistics.
Tensor forward(const ModelSpec& model, ParamSet& params, const Tensor& x, LinearExec& exec,
               BatchCache& cache, bool training);

struct Gradients {
    std::vector<Tensor> g;          // aligned with ParamSet
    Tensor dx;                      // gradient w.r.t. network input
    std::vector<Tensor> dnode_out;  // scratch: grad accumulators per node
};

// Reverse pass from dLogits. Gradients for conv/fc weights use the cached
// effective inputs; propagation through each linear op uses
// exec.backward_weight (W_FP for the CIM path, quantized weights for QAT).
// alpha_grad_hook, when set, is called per conv/fc node with the output
// gradient as a [rows x out_ch] matrix so the CIM trainer can compute
// scale-factor gradients.
void backward(const ModelSpec& model, const ParamSet& params, const BatchCache& cache,
              const Tensor& x, const Tensor& dlogits, LinearExec& exec, Gradients& grads,
              const std::function<void(int node, const Tensor& dout)>& alpha_grad_hook = {});

// Straight-through fake quantizer: forward rounds onto a symmetric
// n_levels grid over [-clip, clip]; backward passes gradients unchanged.
Tensor fake_quantize(const Tensor& w, int n_levels, double clip);

// Softmax cross-entropy for one logit row; gradient is softmax - onehot.
std::pair<double, std::vector<float>> cross_entropy(const std::vector<float>& logits, int label);

// Batched mean loss; dlogits scaled by 1/n.
double cross_entropy_batch(const Tensor& logits, const std::vector<uint8_t>& labels,
                           Tensor& dlogits);

// Decoupled-weight-decay Adam. step() advances t and returns proposed
// deltas (not applied): delta = -lr * (mhat / (sqrt(vhat) + eps) + wd * w).
struct AdamW {
    double lr = 1e-3;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    double weight_decay = 0.0;
    long t = 0;
    std::vector<Tensor> m, v; // lazily sized to params

    void ensure_state(const ParamSet& params);
    // deltas[i] is empty for non-trainable params.
    std::vector<Tensor> step(const ParamSet& params, const std::vector<Tensor>& grads);
};

// Halves the learning rate when the best accuracy has not improved for
// `patience` consecutive epochs; the counter resets after each reduction.
struct PlateauScheduler {
    int patience = 5;
    double factor = 0.5;
    double best = -1.0;
    int stale = 0;

    // Returns the (possibly reduced) learning rate.
    double step(double accuracy, double lr) {
        if (accuracy > best) {
            best = accuracy;
            stale = 0;
            return lr;
        }
        if (++stale >= patience) {
            stale = 0;
            return lr * factor;
        }
        return lr;
    }
};

// Named-tensor checkpoint: u32 count, then per tensor u32 name length, name,
// u32 ndim, u32 dims, raw little-endian f32 payload.
void save_tensors(const std::string& path, const std::vector<std::string>& names,
                  const std::vector<Tensor>& tensors);
void load_tensors(const std::string& path, std::vector<std::string>& names,
                  std::vector<Tensor>& tensors);

} // namespace memtrain
